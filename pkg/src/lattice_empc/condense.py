"""Condensing a linear MPC problem into a multi-parametric QP.

The MPC problem at state ``x`` is::

    min_U  sum_{i<N} x_i'Q x_i + u_i'R u_i + x_N'P x_N
    s.t.   x_{i+1} = A x_i + B u_i + C,   x_0 = x
           u_min <= u_i <= u_max           i = 0..N-1
           x_min <= x_i <= x_max           i = 1..N
           Hf x_N <= hf                    (optional terminal set)

After eliminating the predicted states and shifting the decision variable,
``z = U + E x + e``, it reads ``min 0.5 z'Hz  s.t.  G z <= W + S x``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import DimensionMismatch
from .linalg_qp import QpOptions, QpSolution, as_matrix, as_vector, solve_dare, solve_qp

__all__ = ["MpcProblem", "MpQp", "prediction_matrices", "condense", "first_input"]


@dataclass
class MpcProblem:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    N: int
    x_min: np.ndarray
    x_max: np.ndarray
    u_min: np.ndarray
    u_max: np.ndarray
    P: np.ndarray | None = None
    terminal_set: tuple[np.ndarray, np.ndarray] | None = None

    def __post_init__(self):
        self.A = as_matrix(self.A, "A")
        n = self.A.shape[0]
        self.B = as_matrix(self.B, "B", (n, None))
        m = self.B.shape[1]
        self.C = np.zeros(n) if self.C is None else as_vector(self.C, "C", n)
        self.Q = as_matrix(self.Q, "Q", (n, n))
        self.R = as_matrix(self.R, "R", (m, m))
        if int(self.N) < 1:
            raise ValueError("horizon N must be >= 1")
        self.N = int(self.N)
        for name, size in (("x_min", n), ("x_max", n), ("u_min", m), ("u_max", m)):
            v = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (size,)).copy()
            setattr(self, name, v)
        if np.any(self.x_min >= self.x_max) or np.any(self.u_min >= self.u_max):
            raise ValueError("lower bounds must be strictly below upper bounds")
        if np.linalg.eigvalsh(0.5 * (self.Q + self.Q.T)).min() < -1e-12:
            raise ValueError("Q must be positive semidefinite")
        if np.linalg.eigvalsh(0.5 * (self.R + self.R.T)).min() <= 0:
            raise ValueError("R must be positive definite")
        if self.P is None:
            self.P = solve_dare(self.A, self.B, self.Q, self.R)
        self.P = as_matrix(self.P, "P", (n, n))
        if np.linalg.eigvalsh(0.5 * (self.P + self.P.T)).min() < -1e-12:
            raise ValueError("P must be positive semidefinite")
        if self.terminal_set is not None:
            Hf, hf = self.terminal_set
            Hf = as_matrix(Hf, "Hf", (None, n))
            self.terminal_set = (Hf, as_vector(hf, "hf", Hf.shape[0]))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def rollout(self, x0, U) -> np.ndarray:
        """Predicted states ``x_1..x_N`` stacked as an (N, n) array."""
        x = as_vector(x0, "x0", self.n)
        U = as_vector(U, "U", self.N * self.m).reshape(self.N, self.m)
        out = np.empty((self.N, self.n))
        for i in range(self.N):
            x = self.A @ x + self.B @ U[i] + self.C
            out[i] = x
        return out

    def stage_cost(self, x, u) -> float:
        return float(x @ self.Q @ x + u @ self.R @ u)

    def cost(self, x0, U) -> float:
        """Full objective J(x0, U) including the constant ``x0'Q x0`` term."""
        x0 = as_vector(x0, "x0", self.n)
        U = as_vector(U, "U", self.N * self.m)
        X = self.rollout(x0, U)
        Ur = U.reshape(self.N, self.m)
        J = self.stage_cost(x0, Ur[0])
        for i in range(1, self.N):
            J += self.stage_cost(X[i - 1], Ur[i])
        return float(J + X[-1] @ self.P @ X[-1])


@dataclass
class MpQp:
    """``min 0.5 z'Hz  s.t.  G z <= W + S x`` with ``U = z - (E x + e)``."""

    H: np.ndarray
    G: np.ndarray
    W: np.ndarray
    S: np.ndarray
    E: np.ndarray
    e: np.ndarray
    problem: MpcProblem | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.S.shape[1]

    @property
    def n_z(self) -> int:
        return self.H.shape[0]

    @property
    def m(self) -> int:
        return self.problem.m if self.problem is not None else self.n_z

    @cached_property
    def Hinv(self) -> np.ndarray:
        return np.linalg.inv(self.H)

    def rhs(self, x) -> np.ndarray:
        return self.W + self.S @ x

    def solve(self, x, warm_start=None, opts: QpOptions | None = None) -> QpSolution:
        x = as_vector(x, "x", self.n)
        return solve_qp(self.H, self.G, self.rhs(x), opts=opts, warm_start=warm_start)

    def to_U(self, z, x) -> np.ndarray:
        return z - (self.E @ x + self.e)

    def unconstrained_U(self, x) -> np.ndarray:
        return -(self.E @ x + self.e)


def prediction_matrices(mp: MpcProblem):
    """``X = Sx x0 + Su U + Sc`` over the predicted steps 1..N."""
    n, m, N = mp.n, mp.m, mp.N
    A, B, C = mp.A, mp.B, mp.C
    Apow = [np.eye(n)]
    for _ in range(N):
        Apow.append(A @ Apow[-1])
    Sx = np.vstack(Apow[1:])
    Su = np.zeros((N * n, N * m))
    Sc = np.zeros(N * n)
    acc = np.zeros(n)
    for i in range(N):
        acc = acc + Apow[i] @ C
        Sc[i * n:(i + 1) * n] = acc
        for j in range(i + 1):
            Su[i * n:(i + 1) * n, j * m:(j + 1) * m] = Apow[i - j] @ B
    return Sx, Su, Sc


def _block_diag_repeat(M, k):
    return np.kron(np.eye(k), M)


def condense(mp: MpcProblem) -> MpQp:
    n, m, N = mp.n, mp.m, mp.N
    Sx, Su, Sc = prediction_matrices(mp)
    Qbar = _block_diag_repeat(mp.Q, N)
    Qbar[-n:, -n:] = mp.P
    Rbar = _block_diag_repeat(mp.R, N)

    H = 2.0 * (Su.T @ Qbar @ Su + Rbar)
    H = 0.5 * (H + H.T)
    F = 2.0 * Sx.T @ Qbar @ Su
    c = 2.0 * Su.T @ Qbar @ Sc
    E = np.linalg.solve(H, F.T)
    e = np.linalg.solve(H, c)

    u_max = np.tile(mp.u_max, N)
    u_min = np.tile(mp.u_min, N)
    x_max = np.tile(mp.x_max, N)
    x_min = np.tile(mp.x_min, N)
    I = np.eye(N * m)
    SuE = Su @ E - Sx
    Sue = Su @ e
    blocks = [
        (I, u_max + e, E, np.isfinite(u_max)),
        (-I, -u_min - e, -E, np.isfinite(u_min)),
        (Su, x_max - Sc + Sue, SuE, np.isfinite(x_max)),
        (-Su, -x_min + Sc - Sue, -SuE, np.isfinite(x_min)),
    ]
    if mp.terminal_set is not None:
        Hf, hf = mp.terminal_set
        SuN, SxN, ScN = Su[-n:], Sx[-n:], Sc[-n:]
        blocks.append((Hf @ SuN, hf - Hf @ ScN + Hf @ SuN @ e, Hf @ (SuN @ E - SxN),
                       np.ones(len(hf), dtype=bool)))
    G = np.vstack([b[0][b[3]] for b in blocks])
    W = np.concatenate([b[1][b[3]] for b in blocks])
    S = np.vstack([b[2][b[3]] for b in blocks])
    return MpQp(H=H, G=G, W=W, S=S, E=E, e=e, problem=mp)


def first_input(U, m: int) -> np.ndarray:
    U = np.asarray(U, dtype=float).reshape(-1)
    if m < 1 or U.size % m:
        raise DimensionMismatch(f"length {U.size} is not a multiple of m={m}")
    return U[:m].copy()
