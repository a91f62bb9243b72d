"""Nonlinear attitude dynamics of a small satellite with reaction wheels.

State vector ``x = [omega_ob (3), omega_w (L), eps (3)]`` where ``omega_ob``
is the body rate relative to the orbital frame (body components),
``omega_w`` the wheel speeds relative to the body and ``eps`` the vector
part of the Euler parameters of the body frame relative to the orbital
frame.  The scalar part ``eta`` is not stored; it is rebuilt on the
nonnegative branch.

Input vector ``u = [tau (3), tau_w (L)]``: external (thruster) torques and
internal wheel torques.

Conventions
-----------
``rotation_from_euler_params(eta, eps)`` maps body components to orbital
components.  Its transpose is the orbital-to-body matrix whose columns
``c_i`` appear in the gravity-gradient and orbital-rate terms.  With
``eps_dot = 0.5 (eta I + eps^x) omega_ob`` this is the only assignment that
satisfies ``d/dt R_bo = -omega_ob^x R_bo``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from .errors import ConfigError, EpsOutOfRange, NotUnitQuaternion
from .linalg_qp import as_matrix, as_vector

__all__ = [
    "SatelliteParams",
    "AttitudeState",
    "LinearModel",
    "skew",
    "rotation_from_euler_params",
    "euler_to_eps",
    "eps_to_euler",
    "dynamics",
    "linearize",
    "discretize",
    "integrate_rk4",
    "body_momentum",
    "wheel_momentum",
    "linear_model",
]

DEFAULT_OMEGA0 = 1.1363e-3  # rad/s, roughly a 92 minute circular LEO


@dataclass(frozen=True)
class SatelliteParams:
    inertia: np.ndarray
    wheel_inertia: np.ndarray
    wheel_axes: np.ndarray
    omega0: float = DEFAULT_OMEGA0
    tau_max: np.ndarray = field(default_factory=lambda: np.array([0.0484, 0.0484, 0.0398]))
    tau_w_max: float = 0.0020
    omega_w_max: float = 527.0

    def __post_init__(self):
        inertia = as_matrix(self.inertia, "inertia", (3, 3))
        axes = as_matrix(self.wheel_axes, "wheel_axes")
        if axes.shape[0] != 3:
            axes = axes.T if axes.shape[1] == 3 else axes
        if axes.shape[0] != 3:
            raise ConfigError(f"wheel_axes must be 3 x L, got {axes.shape}")
        L = axes.shape[1]
        iw = np.asarray(self.wheel_inertia, dtype=float)
        iw = np.diag(iw).copy() if iw.ndim == 2 else np.broadcast_to(iw, (L,)).astype(float)
        if iw.shape != (L,) or np.any(iw <= 0):
            raise ConfigError("wheel_inertia must be positive, one value per wheel")
        if not np.allclose(np.linalg.norm(axes, axis=0), 1.0, atol=1e-12):
            raise ConfigError("wheel axes must be unit vectors")
        if not np.allclose(inertia, inertia.T) or np.linalg.eigvalsh(inertia).min() <= 0:
            raise ConfigError("inertia must be symmetric positive definite")
        J = inertia - axes @ np.diag(iw) @ axes.T
        if np.linalg.eigvalsh(0.5 * (J + J.T)).min() <= 0:
            raise ConfigError("I - Lambda I_w Lambda' must be positive definite")
        tau_max = as_vector(self.tau_max, "tau_max", 3)
        for name, val in (("inertia", inertia), ("wheel_axes", axes), ("wheel_inertia", iw),
                          ("tau_max", tau_max)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        Jinv = np.linalg.inv(J)
        Jinv.setflags(write=False)
        object.__setattr__(self, "omega0", float(self.omega0))
        object.__setattr__(self, "tau_w_max", float(self.tau_w_max))
        object.__setattr__(self, "omega_w_max", float(self.omega_w_max))
        object.__setattr__(self, "_J", J)
        object.__setattr__(self, "_Jinv", Jinv)

    @property
    def n_wheels(self) -> int:
        return self.wheel_axes.shape[1]

    @property
    def n_states(self) -> int:
        return 6 + self.n_wheels

    @property
    def n_inputs(self) -> int:
        return 3 + self.n_wheels

    @property
    def J(self) -> np.ndarray:
        """Inertia-like matrix ``I - Lambda I_w Lambda'``."""
        return self._J

    @property
    def J_inv(self) -> np.ndarray:
        return self._Jinv

    @property
    def u_max(self) -> np.ndarray:
        return np.concatenate([self.tau_max, np.full(self.n_wheels, self.tau_w_max)])

    @classmethod
    def nominal(cls, omega0: float = DEFAULT_OMEGA0) -> "SatelliteParams":
        """Micro-satellite with one pitch wheel."""
        return cls(
            inertia=np.diag([4.250, 4.334, 3.664]),
            wheel_inertia=np.array([4e-5]),
            wheel_axes=np.array([[0.0], [1.0], [0.0]]),
            omega0=omega0,
            tau_max=np.array([0.0484, 0.0484, 0.0398]),
            tau_w_max=0.0020,
            omega_w_max=527.0,
        )

    def replace(self, **changes) -> "SatelliteParams":
        kw = dict(
            inertia=self.inertia, wheel_inertia=self.wheel_inertia, wheel_axes=self.wheel_axes,
            omega0=self.omega0, tau_max=self.tau_max, tau_w_max=self.tau_w_max,
            omega_w_max=self.omega_w_max,
        )
        kw.update(changes)
        return SatelliteParams(**kw)

    # JSON keys carry their units
    _KEYS = {
        "inertia_kgm2", "wheel_inertia_kgm2", "wheel_axes", "omega0_rad_s",
        "tau_max_Nm", "tau_w_max_Nm", "omega_w_max_rad_s",
    }

    @classmethod
    def from_dict(cls, d: dict) -> "SatelliteParams":
        unknown = set(d) - cls._KEYS
        if unknown:
            raise ConfigError(f"unknown satellite key(s): {sorted(unknown)}")
        missing = cls._KEYS - {"omega0_rad_s"} - set(d)
        if missing:
            raise ConfigError(f"missing satellite key(s): {sorted(missing)}")
        inertia = np.asarray(d["inertia_kgm2"], dtype=float)
        if inertia.ndim == 1:
            inertia = np.diag(inertia)
        axes = np.asarray(d["wheel_axes"], dtype=float)
        if axes.ndim == 1:
            axes = axes.reshape(3, 1)
        return cls(
            inertia=inertia,
            wheel_inertia=np.atleast_1d(np.asarray(d["wheel_inertia_kgm2"], dtype=float)),
            wheel_axes=axes,
            omega0=d.get("omega0_rad_s", DEFAULT_OMEGA0),
            tau_max=d["tau_max_Nm"],
            tau_w_max=d["tau_w_max_Nm"],
            omega_w_max=d["omega_w_max_rad_s"],
        )

    def to_dict(self) -> dict:
        return {
            "inertia_kgm2": self.inertia.tolist(),
            "wheel_inertia_kgm2": self.wheel_inertia.tolist(),
            "wheel_axes": self.wheel_axes.tolist(),
            "omega0_rad_s": self.omega0,
            "tau_max_Nm": self.tau_max.tolist(),
            "tau_w_max_Nm": self.tau_w_max,
            "omega_w_max_rad_s": self.omega_w_max,
        }

    @classmethod
    def from_json(cls, path) -> "SatelliteParams":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class AttitudeState:
    omega_ob: np.ndarray
    omega_w: np.ndarray
    eps: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "omega_ob", as_vector(self.omega_ob, "omega_ob", 3))
        object.__setattr__(self, "omega_w", np.atleast_1d(as_vector(self.omega_w, "omega_w")))
        eps = as_vector(self.eps, "eps", 3)
        if eps @ eps > 1.0 + 1e-9:
            raise EpsOutOfRange(f"|eps| = {np.linalg.norm(eps):.12g} > 1")
        object.__setattr__(self, "eps", eps)

    @property
    def eta(self) -> float:
        return float(np.sqrt(max(0.0, 1.0 - self.eps @ self.eps)))

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.omega_ob, self.omega_w, self.eps])

    @classmethod
    def from_vector(cls, x, n_wheels: int = 1) -> "AttitudeState":
        x = as_vector(x, "x", 6 + n_wheels)
        return cls(x[:3], x[3:3 + n_wheels], x[3 + n_wheels:])

    @classmethod
    def from_euler_deg(cls, omega_ob, omega_w, euler_deg) -> "AttitudeState":
        _, eps = euler_to_eps(*np.deg2rad(euler_deg))
        return cls(omega_ob, omega_w, eps)

    def euler_deg(self) -> np.ndarray:
        return np.rad2deg(eps_to_euler(self.eta, self.eps))


@dataclass(frozen=True)
class LinearModel:
    A_c: np.ndarray
    B_c: np.ndarray
    C_c: np.ndarray
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    Ts: float


def _cross(a, b) -> np.ndarray:
    # np.cross carries heavy per-call overhead for 3-vectors
    return np.array([a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]])


def skew(v) -> np.ndarray:
    """Cross-product matrix: ``skew(v) @ w == np.cross(v, w)``."""
    v1, v2, v3 = as_vector(v, "v", 3)
    return np.array([[0.0, -v3, v2], [v3, 0.0, -v1], [-v2, v1, 0.0]])


def _rotation(eta: float, eps: np.ndarray) -> np.ndarray:
    S = skew(eps)
    return np.eye(3) + 2.0 * eta * S + 2.0 * S @ S


def rotation_from_euler_params(eta: float, eps) -> np.ndarray:
    """``1 + 2 eta eps^x + 2 eps^x eps^x`` (body to orbital components)."""
    eps = as_vector(eps, "eps", 3)
    if abs(eta * eta + eps @ eps - 1.0) > 1e-9:
        raise NotUnitQuaternion(f"eta^2 + |eps|^2 = {eta * eta + eps @ eps!r}")
    return _rotation(float(eta), eps)


def _quat_mul(a, b):
    a0, av = a[0], np.asarray(a[1:])
    b0, bv = b[0], np.asarray(b[1:])
    return np.concatenate([[a0 * b0 - av @ bv], a0 * bv + b0 * av + np.cross(av, bv)])


def euler_to_eps(phi: float, theta: float, psi: float) -> tuple[float, np.ndarray]:
    """Euler parameters of a 3-2-1 (yaw, pitch, roll) rotation.

    The result is put on the ``eta >= 0`` branch.
    """
    qx = np.array([np.cos(phi / 2), np.sin(phi / 2), 0.0, 0.0])
    qy = np.array([np.cos(theta / 2), 0.0, np.sin(theta / 2), 0.0])
    qz = np.array([np.cos(psi / 2), 0.0, 0.0, np.sin(psi / 2)])
    q = _quat_mul(_quat_mul(qz, qy), qx)
    q /= np.linalg.norm(q)
    if q[0] < 0:
        q = -q
    return float(q[0]), q[1:].copy()


def eps_to_euler(eta: float, eps) -> np.ndarray:
    """Inverse of :func:`euler_to_eps`; returns ``[phi, theta, psi]`` in radians."""
    R = _rotation(float(eta), as_vector(eps, "eps", 3))
    theta = -np.arcsin(np.clip(R[2, 0], -1.0, 1.0))
    phi = np.arctan2(R[2, 1], R[2, 2])
    psi = np.arctan2(R[1, 0], R[0, 0])
    return np.array([phi, theta, psi])


def _split(x, p: SatelliteParams):
    L = p.n_wheels
    return x[:3], x[3:3 + L], x[3 + L:6 + L]


def _eta(eps: np.ndarray) -> float:
    s = eps @ eps
    if s > 1.0 + 1e-9:
        raise EpsOutOfRange(f"|eps|^2 = {s:.12g} > 1")
    return float(np.sqrt(max(0.0, 1.0 - s)))


def _inertial_rate(w, eps, p):
    """Body rate relative to inertial space and the orbital-axis columns."""
    eta = _eta(eps)
    Rbo = _rotation(eta, eps).T
    c2, c3 = Rbo[:, 1], Rbo[:, 2]
    return w - p.omega0 * c2, eta, c2, c3


def dynamics(x, u, p: SatelliteParams) -> np.ndarray:
    """Time derivative ``[omega_ob_dot, omega_w_dot, eps_dot]``."""
    if isinstance(x, AttitudeState):
        x = x.to_vector()
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    w, ww, eps = _split(x, p)
    tau, tau_w = u[:3], u[3:]
    w_ib, eta, c2, c3 = _inertial_rate(w, eps, p)
    I, Lam, Iw, Jinv = p.inertia, p.wheel_axes, p.wheel_inertia, p.J_inv

    h = I @ w_ib + Lam @ (Iw * ww)
    gravity = 3.0 * p.omega0 ** 2 * _cross(c3, I @ c3)
    hb_dot = -_cross(w_ib, h) + gravity + tau
    Jhb = Jinv @ hb_dot
    JLt = Jinv @ (Lam @ tau_w)

    w_dot = Jhb - JLt + p.omega0 * (-_cross(w, c2))
    ww_dot = -Lam.T @ Jhb + Lam.T @ JLt + tau_w / Iw
    eps_dot = 0.5 * (eta * w + _cross(eps, w))
    return np.concatenate([w_dot, ww_dot, eps_dot])


def body_momentum(x, p: SatelliteParams) -> np.ndarray:
    """Total angular momentum in body components, ``I omega_ib + Lambda I_w omega_w``."""
    x = x.to_vector() if isinstance(x, AttitudeState) else np.asarray(x, float)
    w, ww, eps = _split(x, p)
    w_ib = _inertial_rate(w, eps, p)[0]
    return p.inertia @ w_ib + p.wheel_axes @ (p.wheel_inertia * ww)


def wheel_momentum(x, p: SatelliteParams) -> np.ndarray:
    """Axial wheel momenta ``I_w (Lambda' omega_ib + omega_w)``."""
    x = x.to_vector() if isinstance(x, AttitudeState) else np.asarray(x, float)
    w, ww, eps = _split(x, p)
    w_ib = _inertial_rate(w, eps, p)[0]
    return p.wheel_inertia * (p.wheel_axes.T @ w_ib + ww)


def linearize(p: SatelliteParams, x_s=None, u_s=None):
    """Central-difference Jacobians of :func:`dynamics` at ``(x_s, u_s)``.

    Returns ``(A_c, B_c, C_c)`` with ``C_c = f(x_s, u_s) - A_c x_s - B_c u_s``.
    """
    n, m = p.n_states, p.n_inputs
    x_s = np.zeros(n) if x_s is None else (
        x_s.to_vector() if isinstance(x_s, AttitudeState) else as_vector(x_s, "x_s", n))
    u_s = np.zeros(m) if u_s is None else as_vector(u_s, "u_s", m)

    def jac(f, v0, size):
        cols = []
        for i in range(size):
            h = 1e-6 * (1.0 + abs(v0[i]))
            dv = np.zeros(size)
            dv[i] = h
            cols.append((f(v0 + dv) - f(v0 - dv)) / (2.0 * h))
        return np.column_stack(cols)

    A_c = jac(lambda xx: dynamics(xx, u_s, p), x_s, n)
    B_c = jac(lambda uu: dynamics(x_s, uu, p), u_s, m)
    C_c = dynamics(x_s, u_s, p) - A_c @ x_s - B_c @ u_s
    return A_c, B_c, C_c


def discretize(A_c, B_c, C_c, Ts: float):
    """Exact zero-order-hold discretisation through one augmented exponential."""
    if Ts <= 0:
        raise ValueError("Ts must be positive")
    A_c = as_matrix(A_c, "A_c")
    n = A_c.shape[0]
    B_c = as_matrix(B_c, "B_c", (n, None))
    C_c = as_vector(C_c, "C_c", n)
    m = B_c.shape[1]
    M = np.zeros((n + m + 1, n + m + 1))
    M[:n, :n] = A_c
    M[:n, n:n + m] = B_c
    M[:n, n + m] = C_c
    E = sla.expm(M * Ts)
    return E[:n, :n], E[:n, n:n + m], E[:n, n + m]


def linear_model(p: SatelliteParams, Ts: float, x_s=None, u_s=None) -> LinearModel:
    A_c, B_c, C_c = linearize(p, x_s, u_s)
    A, B, C = discretize(A_c, B_c, C_c, Ts)
    return LinearModel(A_c, B_c, C_c, A, B, C, float(Ts))


def integrate_rk4(x, u, Ts: float, substeps: int, p: SatelliteParams):
    """Classical RK4 over one sample with the input held constant.

    Accepts and returns either a state vector or an :class:`AttitudeState`.
    A rounding overshoot of ``|eps|`` up to 1e-9 is pulled back onto the unit
    ball; anything larger raises :class:`EpsOutOfRange`.
    """
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    as_state = isinstance(x, AttitudeState)
    xv = x.to_vector() if as_state else np.array(x, dtype=float)
    u = np.asarray(u, dtype=float)
    dt = Ts / substeps
    L = p.n_wheels
    for _ in range(substeps):
        k1 = dynamics(xv, u, p)
        k2 = dynamics(_guard(xv + 0.5 * dt * k1, L), u, p)
        k3 = dynamics(_guard(xv + 0.5 * dt * k2, L), u, p)
        k4 = dynamics(_guard(xv + dt * k3, L), u, p)
        xv = xv + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        eps = xv[3 + L:]
        s = eps @ eps
        if s > 1.0 + 1e-9:
            raise EpsOutOfRange(f"|eps|^2 = {s:.12g} after RK4 step")
        if s > 1.0:
            xv[3 + L:] = eps / np.sqrt(s)
    return AttitudeState.from_vector(xv, L) if as_state else xv


def _guard(x, L):
    # intermediate RK stages may graze |eps| = 1 from outside by round-off
    eps = x[3 + L:]
    s = eps @ eps
    if 1.0 < s <= 1.0 + 1e-9:
        x = x.copy()
        x[3 + L:] = eps / np.sqrt(s)
    return x
