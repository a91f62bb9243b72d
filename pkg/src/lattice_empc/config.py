"""Run configuration (JSON, unit-bearing keys) and problem factories."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .condense import MpcProblem
from .errors import ConfigError
from .satellite import AttitudeState, SatelliteParams, linear_model

__all__ = [
    "RunConfig",
    "default_config_dict",
    "example1_problem",
    "EXAMPLE1_X0",
    "satellite_problem",
]

EXAMPLE1_X0 = np.array([1.0, 0.0])


def example1_problem(terminal: str = "zero", N: int = 5) -> MpcProblem:
    """Two-state benchmark system with |x_i| <= 2 and |u| <= 2.

    ``terminal="zero"`` drops the terminal penalty; ``"dare"`` uses the
    Riccati solution, which makes the optimal cost a Lyapunov function.
    """
    A = np.array([[0.7, -0.1], [0.2, 1.0]])
    B = np.array([[0.1], [0.01]])
    P = {"zero": np.zeros((2, 2)), "dare": None}
    if terminal not in P:
        raise ValueError(f"terminal must be 'zero' or 'dare', got {terminal!r}")
    return MpcProblem(A, B, None, 2.0 * np.eye(2), np.array([[0.01]]), N,
                      -2.0 * np.ones(2), 2.0 * np.ones(2), [-2.0], [2.0], P=P[terminal])


_DEFAULT = {
    "satellite": SatelliteParams.nominal().to_dict(),
    "mpc": {
        "Q_diag": [500.0, 500.0, 500.0, 1e-7, 100.0, 100.0, 100.0],
        "R_diag": [200.0, 200.0, 200.0, 100.0],
        "horizon_N": 24,
        "Ts_s": 0.1,
        # mixed units: rad/s for rates, dimensionless for eps
        "x_max": [1.0, 1.0, 1.0, 527.0, 1.0, 1.0, 1.0],
        "x_min": [-1.0, -1.0, -1.0, -527.0, -1.0, -1.0, -1.0],
        "u_max_Nm": [0.0484, 0.0484, 0.0398, 0.0020],
        "u_min_Nm": [-0.0484, -0.0484, -0.0398, -0.0020],
        # tightening of the predicted-state bounds against linearisation error
        "x_backoff": [0.0, 0.0, 0.0, 0.5, 0.0, 0.0, 0.0],
        "terminal_weight": "dare",
    },
    "sampling": {
        "n_samples": 2000,
        "seed": 0,
        "mode": "trajectory",
        "rollout_steps": 600,
        "perturbed_starts": 30,
        "perturb_euler_deg": 20.0,
        "perturb_rate_frac": 0.3,
        "perturb_wheel_rad_s": 100.0,
    },
    "validation": {
        "n_states": 1000,
        "seed": 1,
        "starts": 10,
        "steps": 400,
    },
    "simulation": {
        "steps": 3000,
        "substeps": 10,
        "controllers": ["mpc", "lattice", "lqr"],
        "x0": {
            "euler_deg": [-25.0, 60.0, 90.0],
            "omega_ob_rad_s": [-0.05, 0.15, -0.08],
            "omega_w_rad_s": [300.0],
        },
    },
    "output": {"dir": "lattice_empc_out"},
}

_CONTROLLERS = {"mpc", "lattice", "lqr"}


def default_config_dict() -> dict:
    return copy.deepcopy(_DEFAULT)


def _check_keys(d, ref, path):
    if not isinstance(d, dict):
        raise ConfigError(f"{path or 'config'} must be an object")
    unknown = set(d) - set(ref)
    if unknown:
        raise ConfigError(f"unknown key(s) in {path or 'config'}: {sorted(unknown)}")
    optional = {"satellite.omega0_rad_s"}
    for k, v in ref.items():
        full = f"{path}.{k}" if path else k
        if k not in d:
            if full in optional:
                continue
            raise ConfigError(f"missing required key '{full}'")
        if isinstance(v, dict) and path != "satellite":
            _check_keys(d[k], v, full)


def _vec(d, key, size, where):
    try:
        v = np.asarray(d[key], dtype=float).reshape(-1)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}.{key}: {exc}") from exc
    if v.size != size:
        raise ConfigError(f"{where}.{key}: expected {size} values, got {v.size}")
    if not np.all(np.isfinite(v)):
        raise ConfigError(f"{where}.{key}: non-finite value")
    return v


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration.  ``raw`` keeps the JSON object for hashing."""

    raw: dict

    @classmethod
    def default(cls) -> "RunConfig":
        return cls.from_dict(default_config_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        _check_keys(d, _DEFAULT, "")
        cfg = cls(copy.deepcopy(d))
        cfg._validate()
        return cfg

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        try:
            d = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        return cls.from_dict(d)

    def to_json(self) -> str:
        return json.dumps(self.raw, indent=2, sort_keys=True)

    def digest(self) -> str:
        canon = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    def _validate(self):
        p = self.params
        n, m = p.n_states, p.n_inputs
        mpc = self.raw["mpc"]
        for key, size in (("Q_diag", n), ("x_max", n), ("x_min", n), ("x_backoff", n),
                          ("R_diag", m), ("u_max_Nm", m), ("u_min_Nm", m)):
            _vec(mpc, key, size, "mpc")
        if not isinstance(mpc["horizon_N"], int) or mpc["horizon_N"] < 1:
            raise ConfigError("mpc.horizon_N must be a positive integer")
        if not float(mpc["Ts_s"]) > 0:
            raise ConfigError("mpc.Ts_s must be positive")
        if mpc["terminal_weight"] not in ("dare", "zero"):
            raise ConfigError("mpc.terminal_weight must be 'dare' or 'zero'")
        if np.any(_vec(mpc, "x_backoff", n, "mpc") < 0):
            raise ConfigError("mpc.x_backoff must be non-negative")
        s = self.raw["sampling"]
        if s["mode"] not in ("uniform", "trajectory"):
            raise ConfigError("sampling.mode must be 'uniform' or 'trajectory'")
        for sec, key in (("sampling", "n_samples"), ("sampling", "rollout_steps"),
                         ("validation", "n_states"), ("validation", "starts"),
                         ("validation", "steps"), ("simulation", "steps"),
                         ("simulation", "substeps")):
            v = self.raw[sec][key]
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ConfigError(f"{sec}.{key} must be a positive integer")
        for sec, key in (("sampling", "seed"), ("validation", "seed"),
                         ("sampling", "perturbed_starts")):
            v = self.raw[sec][key]
            if not isinstance(v, int) or isinstance(v, bool) or v < 0:
                raise ConfigError(f"{sec}.{key} must be a non-negative integer")
        ctrls = self.raw["simulation"]["controllers"]
        if not ctrls or set(ctrls) - _CONTROLLERS:
            raise ConfigError(f"simulation.controllers must be a non-empty subset of {sorted(_CONTROLLERS)}")
        x0 = self.raw["simulation"]["x0"]
        _vec(x0, "euler_deg", 3, "simulation.x0")
        _vec(x0, "omega_ob_rad_s", 3, "simulation.x0")
        _vec(x0, "omega_w_rad_s", p.n_wheels, "simulation.x0")

    # derived objects ---------------------------------------------------

    @property
    def params(self) -> SatelliteParams:
        try:
            return SatelliteParams.from_dict(self.raw["satellite"])
        except ConfigError:
            raise
        except Exception as exc:  # invalid physical data
            raise ConfigError(f"satellite: {exc}") from exc

    @property
    def Ts(self) -> float:
        return float(self.raw["mpc"]["Ts_s"])

    @property
    def x0(self) -> AttitudeState:
        d = self.raw["simulation"]["x0"]
        return AttitudeState.from_euler_deg(d["omega_ob_rad_s"], d["omega_w_rad_s"], d["euler_deg"])

    @property
    def x_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Physical state limits, used to flag violations."""
        mpc = self.raw["mpc"]
        return np.asarray(mpc["x_min"], float), np.asarray(mpc["x_max"], float)

    @property
    def controllers(self) -> list[str]:
        return list(self.raw["simulation"]["controllers"])

    @property
    def sampling(self) -> dict:
        return dict(self.raw["sampling"])

    @property
    def validation(self) -> dict:
        return dict(self.raw["validation"])

    @property
    def output_dir(self) -> Path:
        return Path(self.raw["output"]["dir"])

    def problem(self) -> MpcProblem:
        return satellite_problem(self.params, self.raw["mpc"])


def satellite_problem(p: SatelliteParams, mpc: dict) -> MpcProblem:
    """Linear MPC problem for the satellite linearised at the target attitude."""
    lm = linear_model(p, float(mpc["Ts_s"]))
    back = np.asarray(mpc["x_backoff"], float)
    P = np.zeros((p.n_states,) * 2) if mpc["terminal_weight"] == "zero" else None
    return MpcProblem(
        lm.A, lm.B, lm.C,
        np.diag(mpc["Q_diag"]), np.diag(mpc["R_diag"]), int(mpc["horizon_N"]),
        np.asarray(mpc["x_min"], float) + back, np.asarray(mpc["x_max"], float) - back,
        np.asarray(mpc["u_min_Nm"], float), np.asarray(mpc["u_max_Nm"], float), P=P,
    )
