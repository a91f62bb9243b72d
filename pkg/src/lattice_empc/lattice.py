"""Lattice (max-min) piecewise-affine functions built from sampled pieces.

A lattice is ``f(x) = max_i min_{j in T_i} (a_j x + b_j)``: the affine
functions are *literals*, each index set ``T_i`` forms a *term*.  Given
sample states ``x_i`` with local affine laws ``u_i``, the term of sample
``i`` collects every literal that is not below the local one at ``x_i``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, EmptySamples, ParseError, VersionMismatch
from .explicit_law import TOL_PIECE, AffinePiece

__all__ = [
    "TOL_CMP",
    "FORMAT_VERSION",
    "LatticePwa",
    "LatticeBundle",
    "literal_table",
    "build_lattice",
    "build_bundle",
    "eval_lattice",
    "eval_bundle",
    "simplify",
    "lower_upper",
    "estimate_error_bound",
    "save",
    "load",
    "dumps",
    "loads",
]

TOL_CMP = 1e-9
FORMAT_VERSION = 1


@dataclass(frozen=True)
class LatticePwa:
    """One scalar lattice PWA function (one input channel)."""

    a: np.ndarray  # (L, n) literal gradients
    b: np.ndarray  # (L,) literal offsets
    terms: tuple[tuple[int, ...], ...]
    channel: int = 0
    _pad: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.a, dtype=float))
        b = np.asarray(self.b, dtype=float).reshape(-1)
        if a.shape[0] != b.size:
            raise DimensionMismatch("literal gradients and offsets disagree in length")
        terms = tuple(tuple(int(j) for j in t) for t in self.terms)
        if not terms:
            raise EmptySamples("a lattice needs at least one term")
        for t in terms:
            if not t:
                raise ValueError("empty term")
            if min(t) < 0 or max(t) >= b.size:
                raise IndexError(f"term {t} references a missing literal")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "terms", terms)
        object.__setattr__(self, "_pad", _padded(terms))

    @property
    def n(self) -> int:
        return self.a.shape[1]

    @property
    def n_literals(self) -> int:
        return self.b.size

    @property
    def n_terms(self) -> int:
        return len(self.terms)

    def literal(self, j: int) -> tuple[np.ndarray, float]:
        return self.a[j], float(self.b[j])

    def __call__(self, x) -> float:
        return eval_lattice(self, x)


def _padded(terms) -> np.ndarray:
    # pad each term with its own first index; repeats do not change a min
    width = max(len(t) for t in terms)
    pad = np.empty((len(terms), width), dtype=np.intp)
    for i, t in enumerate(terms):
        pad[i, :len(t)] = t
        pad[i, len(t):] = t[0]
    return pad


@dataclass(frozen=True)
class LatticeBundle:
    """One lattice per input channel, evaluated together."""

    channels: tuple[LatticePwa, ...]

    def __post_init__(self):
        chans = tuple(self.channels)
        if not chans:
            raise EmptySamples("a bundle needs at least one channel")
        if len({c.n for c in chans}) != 1:
            raise DimensionMismatch("channels disagree on the state dimension")
        object.__setattr__(self, "channels", chans)
        offs = np.cumsum([0] + [c.n_literals for c in chans])
        flat = [np.asarray(t, dtype=np.intp) + offs[k] for k, c in enumerate(chans) for t in c.terms]
        sizes = np.array([t.size for t in flat])
        n_terms = np.array([c.n_terms for c in chans])
        # min over each term's literals, then max over each channel's terms
        object.__setattr__(self, "_a", np.vstack([c.a for c in chans]))
        object.__setattr__(self, "_b", np.concatenate([c.b for c in chans]))
        object.__setattr__(self, "_flat", np.concatenate(flat))
        object.__setattr__(self, "_term_starts", np.concatenate([[0], np.cumsum(sizes)[:-1]]))
        object.__setattr__(self, "_chan_starts", np.concatenate([[0], np.cumsum(n_terms)[:-1]]))

    @property
    def n(self) -> int:
        return self.channels[0].n

    @property
    def m(self) -> int:
        return len(self.channels)

    def __call__(self, x) -> np.ndarray:
        return eval_bundle(self, x)

    def __eq__(self, other):
        if not isinstance(other, LatticeBundle) or other.m != self.m:
            return NotImplemented
        return all(
            c.terms == d.terms and np.array_equal(c.a, d.a) and np.array_equal(c.b, d.b)
            for c, d in zip(self.channels, other.channels)
        )

    __hash__ = None


def eval_lattice(lat: LatticePwa, x) -> float:
    vals = lat.a @ np.asarray(x, dtype=float) + lat.b
    return float(vals[lat._pad].min(axis=1).max())


def eval_bundle(bundle: LatticeBundle, x) -> np.ndarray:
    vals = bundle._a @ x + bundle._b
    mins = np.minimum.reduceat(vals[bundle._flat], bundle._term_starts)
    return np.maximum.reduceat(mins, bundle._chan_starts)


def literal_table(samples: Sequence[tuple[np.ndarray, AffinePiece]], channel: int,
                  tol_piece: float = TOL_PIECE):
    """Distinct literals of one channel and the literal index of each sample."""
    a_list: list[np.ndarray] = []
    b_list: list[float] = []
    loc: list[int] = []
    for _, piece in samples:
        a, b = piece.f[channel], float(piece.g[channel])
        for j, (aj, bj) in enumerate(zip(a_list, b_list)):
            if abs(bj - b) <= tol_piece and np.abs(aj - a).max(initial=0.0) <= tol_piece:
                loc.append(j)
                break
        else:
            loc.append(len(a_list))
            a_list.append(np.array(a, dtype=float))
            b_list.append(b)
    return np.array(a_list), np.array(b_list), np.array(loc, dtype=np.intp)


def _sample_values(samples, a, b):
    X = np.array([np.asarray(x, dtype=float) for x, _ in samples])
    return X @ a.T + b  # (Ns, L): literal j at sample i


def build_lattice(samples: Sequence[tuple[np.ndarray, AffinePiece]], channel: int = 0,
                  tol_cmp: float = TOL_CMP, tol_piece: float = TOL_PIECE) -> LatticePwa:
    """Max-min lattice with one term per sample.

    Term ``i`` is ``{j : l_j(x_i) >= l_loc(i)(x_i) - tol_cmp}``; ties are
    included.  Duplicate or dominated terms are kept; see :func:`simplify`.
    """
    if not samples:
        raise EmptySamples("build_lattice needs at least one sample")
    a, b, loc = literal_table(samples, channel, tol_piece)
    V = _sample_values(samples, a, b)
    own = V[np.arange(len(loc)), loc]
    terms = [tuple(np.flatnonzero(V[i] >= own[i] - tol_cmp)) for i in range(len(loc))]
    return LatticePwa(a, b, tuple(terms), channel)


def build_bundle(samples, m: int, simplified: bool = True, **kw) -> LatticeBundle:
    lats = [build_lattice(samples, k, **kw) for k in range(m)]
    if simplified:
        lats = [simplify(lat) for lat in lats]
    return LatticeBundle(tuple(lats))


def simplify(lat: LatticePwa) -> LatticePwa:
    """Drop duplicate terms, terms that are supersets of another term, and
    literals no surviving term uses.  The function value is unchanged."""
    seen: dict[frozenset, int] = {}
    for t in lat.terms:
        seen.setdefault(frozenset(t), len(seen))
    uniq = list(seen)
    if len(uniq) > 1:
        B = np.zeros((len(uniq), lat.n_literals), dtype=np.float32)
        for i, s in enumerate(uniq):
            B[i, list(s)] = 1.0
        sizes = B.sum(axis=1)
        overlap = B @ B.T  # |T_i & T_j|
        # T_i is a strict superset of T_j  <=>  |T_i & T_j| == |T_j| < |T_i|
        sup = (overlap == sizes[None, :]) & (sizes[:, None] > sizes[None, :])
        keep = ~sup.any(axis=1)
        uniq = [s for s, k in zip(uniq, keep) if k]
    used = sorted(set().union(*uniq))
    remap = {old: new for new, old in enumerate(used)}
    terms = tuple(tuple(sorted(remap[j] for j in s)) for s in uniq)
    return LatticePwa(lat.a[used], lat.b[used], terms, lat.channel)


def lower_upper(samples, channel: int = 0, tol_cmp: float = TOL_CMP,
                tol_piece: float = TOL_PIECE):
    """Upper (max-min over ``J>=``) and lower (min-max over ``J<=``) forms.

    The lower form is returned as a :class:`LatticePwa` of the negated
    literals, so ``lower(x) = -eval_lattice(neg, x)``.
    """
    if not samples:
        raise EmptySamples("need at least one sample")
    a, b, loc = literal_table(samples, channel, tol_piece)
    V = _sample_values(samples, a, b)
    own = V[np.arange(len(loc)), loc]
    up = [tuple(np.flatnonzero(V[i] >= own[i] - tol_cmp)) for i in range(len(loc))]
    lo = [tuple(np.flatnonzero(V[i] <= own[i] + tol_cmp)) for i in range(len(loc))]
    upper = simplify(LatticePwa(a, b, tuple(up), channel))
    neg = simplify(LatticePwa(-a, -b, tuple(lo), channel))
    return upper, neg


def estimate_error_bound(samples, validation_x, channels: Sequence[int] | int = 0,
                         tol_cmp: float = TOL_CMP, tol_piece: float = TOL_PIECE) -> float:
    """Largest gap ``|upper(x) - lower(x)|`` over the validation states.

    Both forms interpolate the samples but neither bounds the other away from
    them, so the gap is taken in absolute value. With several channels the
    maximum over channels is returned.
    """
    chans = [channels] if np.isscalar(channels) else list(channels)
    X = np.atleast_2d(np.asarray(validation_x, dtype=float))
    gap = 0.0
    for k in chans:
        upper, neg = lower_upper(samples, k, tol_cmp, tol_piece)
        up = _eval_many(upper, X)
        lo = -_eval_many(neg, X)
        gap = max(gap, float(np.abs(up - lo).max()))
    return gap


def _eval_many(lat: LatticePwa, X: np.ndarray) -> np.ndarray:
    vals = X @ lat.a.T + lat.b  # (P, L)
    out = np.full(X.shape[0], -np.inf)
    for t in lat.terms:
        np.maximum(out, vals[:, list(t)].min(axis=1), out=out)
    return out


# serialisation -----------------------------------------------------------

def _to_obj(bundle: LatticeBundle) -> dict:
    return {
        "version": FORMAT_VERSION,
        "n": bundle.n,
        "m": bundle.m,
        "channels": [
            {
                "literals": [{"a": [float(v) for v in lat.a[j]], "b": float(lat.b[j])}
                             for j in range(lat.n_literals)],
                "terms": [list(t) for t in lat.terms],
            }
            for lat in bundle.channels
        ],
    }


def dumps(bundle: LatticeBundle) -> str:
    return json.dumps(_to_obj(bundle), indent=1)


def loads(text: str) -> LatticeBundle:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(obj, dict) or "version" not in obj:
        raise ParseError("missing mandatory 'version' field")
    if obj["version"] != FORMAT_VERSION:
        raise VersionMismatch(f"file version {obj['version']!r}, expected {FORMAT_VERSION}")
    try:
        n, m, chans = int(obj["n"]), int(obj["m"]), obj["channels"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad header: {exc}") from exc
    if not chans:
        raise ParseError("bundle has no channels")
    if len(chans) != m:
        raise ParseError(f"header says m={m} but {len(chans)} channels are present")
    lats = []
    for k, ch in enumerate(chans):
        lits = ch.get("literals") or []
        terms = ch.get("terms") or []
        if not lits or not terms:
            raise ParseError(f"channel {k}: empty literal or term list")
        a = np.empty((len(lits), n))
        b = np.empty(len(lits))
        for j, lit in enumerate(lits):
            try:
                row = np.asarray(lit["a"], dtype=float)
                b[j] = float(lit["b"])
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"channel {k}, literal {j}: {exc}") from exc
            if row.shape != (n,):
                raise ParseError(f"channel {k}, literal {j}: gradient has length {row.size}, expected {n}")
            a[j] = row
        for i, t in enumerate(terms):
            if not t:
                raise ParseError(f"channel {k}, term {i}: empty term")
            for c, idx in enumerate(t):
                if not isinstance(idx, int) or isinstance(idx, bool) or not 0 <= idx < len(lits):
                    raise ParseError(
                        f"channel {k}, term {i} (row {i}, col {c}): bad literal index {idx!r}")
        lats.append(LatticePwa(a, b, tuple(tuple(t) for t in terms), k))
    return LatticeBundle(tuple(lats))


def save(bundle: LatticeBundle, path) -> None:
    Path(path).write_text(dumps(bundle))


def load(path) -> LatticeBundle:
    return loads(Path(path).read_text())
