"""Dense numerical kernels: a strictly convex active-set QP solver, a DARE
solver and the LQR gain built on top of it.

The QP solved here is always in the homogeneous form used by the condensed
MPC problem::

    min_z  0.5 z' H z   s.t.  G z <= rhs

The solver is the dual active-set method of Goldfarb and Idnani.  It starts
from a dual-feasible point (the unconstrained minimiser, or the optimum of a
supplied working set whose multipliers are nonnegative) and adds violated
constraints one at a time, so no separate phase-1 is needed: a violated
constraint that cannot be added certifies infeasibility.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from .errors import DimensionMismatch, NoConvergence, NotPositiveDefinite

__all__ = [
    "QpStatus",
    "QpOptions",
    "QpSolution",
    "solve_qp",
    "kkt_residuals",
    "solve_dare",
    "dare_residual",
    "lqr_gain",
    "as_matrix",
    "as_vector",
]


def as_matrix(a, name: str = "matrix", shape: tuple | None = None) -> np.ndarray:
    """Return ``a`` as a finite 2-D float array, optionally checking its shape."""
    m = np.atleast_2d(np.asarray(a, dtype=float))
    if m.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-D, got {m.ndim}-D")
    if shape is not None:
        for got, want in zip(m.shape, shape):
            if want is not None and got != want:
                raise DimensionMismatch(f"{name} has shape {m.shape}, expected {shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite entries")
    return m


def as_vector(v, name: str = "vector", size: int | None = None) -> np.ndarray:
    vec = np.asarray(v, dtype=float).reshape(-1)
    if size is not None and vec.size != size:
        raise DimensionMismatch(f"{name} has length {vec.size}, expected {size}")
    if not np.all(np.isfinite(vec)):
        raise ValueError(f"{name} contains non-finite entries")
    return vec


class QpStatus(str, Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    MAX_ITER = "MaxIter"


@dataclass(frozen=True)
class QpOptions:
    tol_kkt: float = 1e-8
    tol_feas: float = 1e-8
    tol_active: float = 1e-7
    max_iter: int | None = None  # default 50 * (n + m_c)
    # relative threshold on the projected norm of a new constraint row
    tol_dependent: float = 1e-10


@dataclass
class QpSolution:
    """Result of :func:`solve_qp`.

    ``active_set`` holds every constraint that is tight at the optimum
    (strongly or weakly); ``weakly_active`` is the subset whose multiplier is
    not above ``tol_active``.  ``working_set`` is the solver's final working
    set and is what should be passed back as a warm start.
    """

    z: np.ndarray
    lam: np.ndarray
    active_set: list[int]
    status: QpStatus
    weakly_active: list[int] = field(default_factory=list)
    working_set: list[int] = field(default_factory=list)
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status is QpStatus.OPTIMAL

    @property
    def strongly_active(self) -> list[int]:
        weak = set(self.weakly_active)
        return [j for j in self.active_set if j not in weak]


def _cholesky(H: np.ndarray) -> np.ndarray:
    if not np.allclose(H, H.T, rtol=1e-10, atol=1e-12 * max(1.0, np.abs(H).max())):
        raise NotPositiveDefinite("H is not symmetric")
    try:
        return np.linalg.cholesky(H)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("H is not positive definite") from exc


def solve_qp(
    H,
    G,
    rhs,
    opts: QpOptions | None = None,
    warm_start: Sequence[int] | None = None,
) -> QpSolution:
    """Solve ``min 0.5 z'Hz  s.t.  G z <= rhs`` for strictly convex ``H``.

    Parameters
    ----------
    H : (n, n) array, symmetric positive definite.
    G : (m_c, n) array.  May have zero rows.
    rhs : (m_c,) array.
    opts : solver tolerances, see :class:`QpOptions`.
    warm_start : optional list of constraint indices to start from.  Rows that
        are linearly dependent or carry negative multipliers are discarded
        before the dual iterations begin.

    Returns
    -------
    QpSolution
        ``status`` is ``Infeasible`` or ``MaxIter`` instead of raising, so
        callers decide how to react.
    """
    opts = opts or QpOptions()
    H = as_matrix(H, "H")
    n = H.shape[0]
    if H.shape != (n, n):
        raise DimensionMismatch(f"H must be square, got {H.shape}")
    G = np.asarray(G, dtype=float)
    if G.size == 0:
        G = G.reshape(0, n)
    G = as_matrix(G, "G") if G.shape[0] else G
    if G.ndim != 2 or G.shape[1] != n:
        raise DimensionMismatch(f"G has shape {G.shape}, expected (m_c, {n})")
    m_c = G.shape[0]
    rhs = as_vector(rhs, "rhs", m_c) if m_c else np.zeros(0)
    max_iter = opts.max_iter if opts.max_iter is not None else 50 * (n + m_c)

    L = _cholesky(H)
    return _DualActiveSet(L, G, rhs, opts, max_iter).run(warm_start or ())


class _DualActiveSet:
    """Goldfarb-Idnani iterations working in the factor space of H = L L'.

    With ``M = L^{-1} G'`` the primal iterate is ``z = -L^{-T} M_A lam_A`` and
    every quantity below is an inner product of columns of ``M``.
    """

    def __init__(self, L, G, rhs, opts, max_iter):
        self.L = L
        self.G = G
        self.rhs = rhs
        self.opts = opts
        self.max_iter = max_iter
        self.n = L.shape[0]
        self._cols: dict[int, np.ndarray] = {}

    def col(self, j: int) -> np.ndarray:
        c = self._cols.get(j)
        if c is None:
            c = sla.solve_triangular(self.L, self.G[j], lower=True, check_finite=False)
            self._cols[j] = c
        return c

    def mat(self, idx: Sequence[int]) -> np.ndarray:
        if not idx:
            return np.zeros((self.n, 0))
        return np.column_stack([self.col(j) for j in idx])

    def equality_multipliers(self, A: list[int]) -> np.ndarray:
        if not A:
            return np.zeros(0)
        MA = self.mat(A)
        K = MA.T @ MA
        return -np.linalg.solve(K, self.rhs[A])

    def independent_subset(self, idx) -> list[int]:
        """Greedy, order-preserving selection of linearly independent rows."""
        Qb = np.empty((self.n, min(len(idx), self.n)))
        keep: list[int] = []
        for j in idx:
            mj = self.col(j)
            nrm = mj @ mj
            k = len(keep)
            if nrm <= 0.0 or k == self.n:
                continue
            r = mj
            if k:
                B = Qb[:, :k]
                for _ in range(2):  # re-orthogonalise once for stability
                    r = r - B @ (B.T @ r)
            rr = r @ r
            if rr > self.opts.tol_dependent * nrm:
                Qb[:, k] = r / np.sqrt(rr)
                keep.append(j)
        return keep

    def primal(self, A: list[int], lamA: np.ndarray, p: int | None = None, lam_p: float = 0.0):
        w = self.mat(A) @ lamA if A else np.zeros(self.n)
        if p is not None and lam_p != 0.0:
            w = w + self.col(p) * lam_p
        return -sla.solve_triangular(self.L, w, lower=True, trans="T", check_finite=False)

    def run(self, warm_start) -> QpSolution:
        G, rhs, opts = self.G, self.rhs, self.opts
        m_c = G.shape[0]
        iters = 0

        # admissible warm start: independent rows with nonnegative multipliers
        A = self.independent_subset(
            [j for j in dict.fromkeys(int(j) for j in warm_start) if 0 <= j < m_c])
        lamA = self.equality_multipliers(A)
        while A and lamA.min() < 0.0:
            A.pop(int(np.argmin(lamA)))
            lamA = self.equality_multipliers(A)
            iters += 1

        z = self.primal(A, lamA)
        while True:
            viol = G @ z - rhs if m_c else np.zeros(0)
            if m_c == 0 or viol.max() <= opts.tol_feas:
                break
            if iters >= self.max_iter:
                return self._result(z, A, lamA, QpStatus.MAX_ITER, iters)
            # most violated constraint, lowest index on ties
            p = int(np.argmax(viol))
            lam_p = 0.0
            mp = self.col(p)
            while True:
                iters += 1
                if iters > self.max_iter:
                    return self._result(z, A, lamA, QpStatus.MAX_ITER, iters)
                if A:
                    MA = self.mat(A)
                    K = MA.T @ MA
                    r = np.linalg.solve(K, MA.T @ mp)
                    s = mp - MA @ r
                else:
                    r = np.zeros(0)
                    s = mp
                denom = s @ s
                # dual step limit from multipliers that decrease
                t_d, k = np.inf, -1
                pos = np.flatnonzero(r > 1e-14 * max(1.0, np.abs(r).max(initial=0.0)))
                if pos.size:
                    ratios = lamA[pos] / r[pos]
                    k = int(pos[np.argmin(ratios)])
                    t_d = float(ratios.min())
                if denom <= opts.tol_dependent * (mp @ mp):
                    if not np.isfinite(t_d):
                        return self._result(z, A, lamA, QpStatus.INFEASIBLE, iters)
                    lamA = lamA - t_d * r
                    lam_p += t_d
                    A.pop(k)
                    lamA = np.delete(lamA, k)
                    continue
                z_now = self.primal(A, lamA, p, lam_p)
                viol_p = G[p] @ z_now - rhs[p]
                t_f = max(viol_p, 0.0) / denom
                if t_f <= t_d:
                    A.append(p)
                    lamA = self.equality_multipliers(A)
                    if lamA.min() < 0.0:
                        # round-off pushed a multiplier negative; resolve it
                        lamA = np.maximum(lamA, 0.0)
                    break
                lamA = lamA - t_d * r
                lam_p += t_d
                A.pop(k)
                lamA = np.delete(lamA, k)
            z = self.primal(A, lamA)

        return self._result(z, A, lamA, QpStatus.OPTIMAL, iters)

    def _result(self, z, A, lamA, status, iters) -> QpSolution:
        m_c = self.G.shape[0]
        lam = np.zeros(m_c)
        if A:
            lam[A] = lamA
        active: list[int] = []
        weak: list[int] = []
        if status is QpStatus.OPTIMAL and m_c:
            resid = self.G @ z - self.rhs
            tight = np.abs(resid) <= self.opts.tol_feas
            strong = lam > self.opts.tol_active
            for j in np.flatnonzero(tight | strong):
                active.append(int(j))
                if not strong[j]:
                    weak.append(int(j))
        return QpSolution(
            z=z, lam=lam, active_set=active, status=status,
            weakly_active=weak, working_set=list(A), iterations=iters,
        )


def kkt_residuals(H, G, rhs, sol: QpSolution) -> dict[str, float]:
    """Stationarity, primal feasibility, dual feasibility and complementarity."""
    H = np.asarray(H, float)
    G = np.asarray(G, float).reshape(-1, H.shape[0])
    rhs = np.asarray(rhs, float).reshape(-1)
    z, lam = sol.z, sol.lam
    slack = G @ z - rhs
    return {
        "stationarity": float(np.abs(H @ z + G.T @ lam).max(initial=0.0)),
        "primal": float(np.maximum(slack, 0.0).max(initial=0.0)),
        "dual": float(np.maximum(-lam, 0.0).max(initial=0.0)),
        "complementarity": float(np.abs(lam * slack).max(initial=0.0)),
    }


def dare_residual(A, B, Q, R, P) -> float:
    """Infinity norm of A'PA - P - A'PB (R + B'PB)^{-1} B'PA + Q."""
    BtPA = B.T @ P @ A
    res = A.T @ P @ A - P - BtPA.T @ np.linalg.solve(R + B.T @ P @ B, BtPA) + Q
    return float(np.abs(res).max())


def solve_dare(A, B, Q, R, max_iter: int = 200, tol: float = 1e-14) -> np.ndarray:
    """Stabilising solution of the discrete algebraic Riccati equation.

    Uses the structure-preserving doubling iteration, which converges
    quadratically whenever (A, B) is stabilisable and the closed loop is
    strictly stable, followed by a few Riccati fixed-point sweeps that polish
    the residual.
    """
    A = as_matrix(A, "A")
    n = A.shape[0]
    B = as_matrix(B, "B", (n, None))
    m = B.shape[1]
    Q = as_matrix(Q, "Q", (n, n))
    R = as_matrix(R, "R", (m, m))
    _cholesky(0.5 * (R + R.T))

    Ak = A.copy()
    Gk = B @ np.linalg.solve(R, B.T)
    Hk = 0.5 * (Q + Q.T)
    eye = np.eye(n)
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(max_iter):
            W = eye + Gk @ Hk
            WinvA = np.linalg.solve(W, Ak)
            WinvG = np.linalg.solve(W, Gk)
            H_next = Hk + Ak.T @ Hk @ WinvA
            Gk = Gk + Ak @ WinvG @ Ak.T
            Ak = Ak @ WinvA
            H_next = 0.5 * (H_next + H_next.T)
            Gk = 0.5 * (Gk + Gk.T)
            delta = np.abs(H_next - Hk).max()
            Hk = H_next
            if not np.all(np.isfinite(Hk)):
                break
            if delta <= tol * max(1.0, np.abs(Hk).max()):
                break
        else:
            raise NoConvergence(f"DARE doubling did not converge in {max_iter} sweeps")
    if not np.all(np.isfinite(Hk)):
        raise NoConvergence("DARE iteration diverged; (A, B) may not be stabilisable")

    P = Hk
    scale = max(1.0, np.abs(P).max())
    for _ in range(max_iter):
        if dare_residual(A, B, Q, R, P) <= 1e-10 * scale:
            break
        BtPA = B.T @ P @ A
        P = A.T @ P @ A - BtPA.T @ np.linalg.solve(R + B.T @ P @ B, BtPA) + Q
        P = 0.5 * (P + P.T)
    if dare_residual(A, B, Q, R, P) > 1e-8 * max(1.0, np.abs(P).max()):
        raise NoConvergence("DARE residual did not reach tolerance")
    return P


def lqr_gain(A, B, Q, R) -> np.ndarray:
    """Infinite-horizon discrete LQR gain K, with u = -K x."""
    A = as_matrix(A, "A")
    B = as_matrix(B, "B", (A.shape[0], None))
    R = as_matrix(R, "R")
    P = solve_dare(A, B, Q, R)
    return np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
