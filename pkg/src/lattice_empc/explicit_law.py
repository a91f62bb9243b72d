"""Local affine control laws and critical regions from the KKT conditions.

For a sample state the online QP is solved once; its strongly active set
fixes the optimiser as an affine function of the state on a polyhedral
critical region.  Sampling many states and collecting these pieces is what
the lattice construction consumes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla
from scipy.optimize import linprog

from .condense import MpQp
from .errors import DegenerateActiveSet, MpcInfeasible, SamplingExhausted
from .linalg_qp import QpSolution, as_vector

__all__ = [
    "TOL_PIECE",
    "AffinePiece",
    "CriticalRegion",
    "local_affine_law",
    "sample_states",
    "dedupe_pieces",
    "collect_pieces",
]

TOL_PIECE = 1e-6
_SNAP = 1e-13


@dataclass(frozen=True)
class AffinePiece:
    """``U(x) = f x + g``; rows may be the full horizon or the first input only."""

    f: np.ndarray
    g: np.ndarray

    def __post_init__(self):
        f = np.atleast_2d(np.asarray(self.f, dtype=float))
        g = as_vector(self.g, "g", f.shape[0])
        if not np.all(np.isfinite(f)):
            raise ValueError("piece has non-finite coefficients")
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "g", g)

    def __call__(self, x) -> np.ndarray:
        return self.f @ np.asarray(x, dtype=float) + self.g

    def first(self, m: int) -> "AffinePiece":
        return AffinePiece(self.f[:m], self.g[:m])

    def same_as(self, other: "AffinePiece", tol: float = TOL_PIECE) -> bool:
        if self.f.shape != other.f.shape:
            return False
        return bool(np.abs(self.f - other.f).max(initial=0.0) <= tol
                    and np.abs(self.g - other.g).max(initial=0.0) <= tol)


@dataclass
class CriticalRegion:
    """Polyhedron ``{x : Hc x <= Kc}`` on which the active set is constant."""

    Hc: np.ndarray
    Kc: np.ndarray
    active_set: list[int]
    weakly_active: list[int] = field(default_factory=list)

    def contains(self, x, tol: float = 1e-8) -> bool:
        return bool(np.all(self.Hc @ x <= self.Kc + tol))

    def chebyshev(self, bounds: tuple[np.ndarray, np.ndarray] | None = None):
        """Largest inscribed ball ``(centre, radius)``, optionally intersected with a box."""
        Hc, Kc = self.Hc, self.Kc
        n = Hc.shape[1]
        if bounds is not None:
            lo, hi = (np.asarray(b, float) for b in bounds)
            Hc = np.vstack([Hc, np.eye(n), -np.eye(n)])
            Kc = np.concatenate([Kc, hi, -lo])
        norms = np.linalg.norm(Hc, axis=1)
        keep = norms > 1e-12
        # rows with zero normal only matter through their sign
        if np.any(Kc[~keep] < -1e-9):
            return np.full(n, np.nan), -np.inf
        Hc, Kc, norms = Hc[keep], Kc[keep], norms[keep]
        scale = max(1.0, float(np.abs(Kc).max(initial=1.0)))
        c = np.zeros(n + 1)
        c[-1] = -1.0
        A_ub = np.hstack([Hc, norms[:, None]])
        res = linprog(c, A_ub=A_ub, b_ub=Kc, bounds=[(None, None)] * n + [(0, scale)],
                      method="highs")
        if res.status != 0:
            return np.full(n, np.nan), -np.inf
        return res.x[:n], float(res.x[-1])

    @cached_property
    def lower_dimensional(self) -> bool:
        return self.chebyshev()[1] <= 1e-9


def _independent_rows(GA: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Positions of a maximal independent subset of rows (pivoted QR order)."""
    if GA.shape[0] == 0:
        return np.zeros(0, dtype=int)
    _, Rq, piv = sla.qr(GA.T, mode="economic", pivoting=True)
    d = np.abs(np.diag(Rq))
    rank = int(np.sum(d > tol * max(d[0], 1e-300)))
    return np.sort(piv[:rank])


def local_affine_law(qp: MpQp, x, sol: QpSolution | None = None,
                     tol_law: float = 1e-7) -> tuple[AffinePiece, CriticalRegion]:
    """Affine optimiser ``U = f x + g`` valid on the critical region of ``x``.

    Weakly active constraints are left out of the equality system and only
    enter the region through primal feasibility.
    """
    x = as_vector(x, "x", qp.n)
    if sol is None:
        sol = qp.solve(x)
    if not sol.optimal:
        raise MpcInfeasible(f"QP at sample state is {sol.status.value}")
    A = np.asarray(sol.strongly_active, dtype=int)
    A = A[_independent_rows(qp.G[A])] if A.size else A

    if A.size:
        GA = qp.G[A]
        HiGt = qp.Hinv @ GA.T
        Minv = np.linalg.inv(GA @ HiGt)
        T = HiGt @ Minv
        fz = T @ qp.S[A]
        gz = T @ qp.W[A]
        lam_H = Minv @ qp.S[A]
        lam_K = -Minv @ qp.W[A]
        # an active bound +-z_i <= W + S x pins z_i exactly; skip the solve's round-off
        for j, row in zip(A, GA):
            nz = np.flatnonzero(row)
            if nz.size == 1 and abs(row[nz[0]]) == 1.0:
                i, s = nz[0], row[nz[0]]
                fz[i], gz[i] = s * qp.S[j], s * qp.W[j]
    else:
        fz = np.zeros((qp.n_z, qp.n))
        gz = np.zeros(qp.n_z)
        lam_H = np.zeros((0, qp.n))
        lam_K = np.zeros(0)

    z_law = fz @ x + gz
    if np.abs(z_law - sol.z).max(initial=0.0) > tol_law * max(1.0, np.abs(sol.z).max(initial=0.0)):
        raise DegenerateActiveSet(
            f"affine law misses the QP optimiser by {np.abs(z_law - sol.z).max():.3e}"
        )
    f, g = fz - qp.E, gz - qp.e
    # cancellation in T S_A - E leaves ~eps residue where the law is constant
    f[np.abs(f) <= _SNAP * max(1.0, np.abs(qp.E).max(initial=0.0))] = 0.0
    g[np.abs(g) <= _SNAP * max(1.0, np.abs(qp.e).max(initial=0.0))] = 0.0
    piece = AffinePiece(f, g)

    inactive = np.setdiff1d(np.arange(qp.G.shape[0]), A)
    GN = qp.G[inactive]
    Hc = np.vstack([lam_H, GN @ fz - qp.S[inactive]])
    Kc = np.concatenate([lam_K, qp.W[inactive] - GN @ gz])
    region = CriticalRegion(Hc, Kc, [int(j) for j in A], list(sol.weakly_active))
    return piece, region


def dedupe_pieces(pieces: Sequence[AffinePiece], tol: float = TOL_PIECE) -> list[AffinePiece]:
    """Unique pieces in order of first occurrence."""
    out: list[AffinePiece] = []
    for pc in pieces:
        if not any(pc.same_as(q, tol) for q in out):
            out.append(pc)
    return out


def sample_states(
    qp: MpQp,
    box: tuple,
    n_samples: int,
    seed: int = 0,
    mode: str = "uniform",
    step: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None,
    initial_states: Sequence | None = None,
    rollout_steps: int = 200,
    max_draws: int = 1_000_000,
) -> list[np.ndarray]:
    """Feasible sample states of the mpQP.

    ``mode="uniform"`` draws from the box and rejects states whose QP is
    infeasible.  ``mode="trajectory"`` runs closed-loop MPC rollouts (through
    ``step(x, u)``, the linear prediction model by default) from the given
    initial states, then from random feasible states in the box, and collects
    every visited state.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    lo, hi = (as_vector(b, "box", qp.n) for b in box)
    rng = np.random.default_rng(seed)

    if mode == "uniform":
        out: list[np.ndarray] = []
        draws = 0
        while len(out) < n_samples:
            x = rng.uniform(lo, hi)
            draws += 1
            if qp.solve(x).optimal:
                out.append(x)
            if draws >= max_draws and len(out) < 1e-3 * draws:
                raise SamplingExhausted(f"{len(out)} feasible states in {draws} draws")
        return out

    if mode != "trajectory":
        raise ValueError(f"unknown sampling mode {mode!r}")
    if step is None:
        mp = qp.problem
        if mp is None:
            raise ValueError("trajectory sampling needs a step function or an MpcProblem")
        step = lambda xx, uu: mp.A @ xx + mp.B @ uu + mp.C  # noqa: E731
    m = qp.m
    starts = [as_vector(s, "initial state", qp.n) for s in (initial_states or [])]
    out = []
    draws = 0
    while len(out) < n_samples:
        if starts:
            x = starts.pop(0)
        else:
            x = rng.uniform(lo, hi)
            draws += 1
            if draws >= max_draws:
                raise SamplingExhausted(f"no rollouts possible after {draws} draws")
        ws = None
        for _ in range(rollout_steps):
            sol = qp.solve(x, warm_start=ws)
            if not sol.optimal:
                break
            out.append(np.array(x))
            if len(out) >= n_samples:
                break
            ws = sol.working_set
            u = qp.to_U(sol.z, x)[:m]
            x = step(x, u)
    return out


def collect_pieces(qp: MpQp, states: Sequence, first_only: bool = True
                   ) -> list[tuple[np.ndarray, AffinePiece]]:
    """``(x, piece)`` pairs for each state; pieces reduced to the first input."""
    out = []
    ws = None
    for x in states:
        x = as_vector(x, "x", qp.n)
        sol = qp.solve(x, warm_start=ws)
        ws = sol.working_set
        piece, _ = local_affine_law(qp, x, sol)
        out.append((x, piece.first(qp.m) if first_only else piece))
    return out
