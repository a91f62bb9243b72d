"""Exception types shared across the package."""


class LatticeMpcError(Exception):
    """Base class for all errors raised by this package."""


class DimensionMismatch(LatticeMpcError, ValueError):
    pass


class NotPositiveDefinite(LatticeMpcError, ValueError):
    pass


class NoConvergence(LatticeMpcError, RuntimeError):
    pass


class NotUnitQuaternion(LatticeMpcError, ValueError):
    pass


class EpsOutOfRange(LatticeMpcError, ValueError):
    """Euler-parameter vector part has left the unit ball."""


class DegenerateActiveSet(LatticeMpcError, RuntimeError):
    pass


class MpcInfeasible(LatticeMpcError, RuntimeError):
    """The online QP has no feasible point at the current state."""


class SamplingExhausted(LatticeMpcError, RuntimeError):
    pass


class EmptySamples(LatticeMpcError, ValueError):
    pass


class ParseError(LatticeMpcError, ValueError):
    pass


class VersionMismatch(LatticeMpcError, ValueError):
    pass


class ConfigError(LatticeMpcError, ValueError):
    pass
