"""Closed-loop simulation of online MPC, lattice and LQR controllers."""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .condense import MpQp
from .errors import EpsOutOfRange, MpcInfeasible
from .lattice import LatticeBundle, eval_bundle
from .satellite import AttitudeState, SatelliteParams, integrate_rk4

__all__ = [
    "Controller",
    "OnlineMpc",
    "LatticeController",
    "LqrController",
    "SimResult",
    "control_step",
    "run_closed_loop",
    "optimal_cost",
    "compare_controllers",
    "ComparisonRow",
    "format_table",
    "write_comparison_csv",
]


class Controller:
    """Base class: ``compute`` returns the raw input, ``control_step`` clamps it."""

    name = "controller"

    def __init__(self, u_min, u_max):
        self.u_min = np.asarray(u_min, dtype=float)
        self.u_max = np.asarray(u_max, dtype=float)

    def reset(self) -> None:
        pass

    def compute(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class OnlineMpc(Controller):
    name = "Linear MPC"

    def __init__(self, qp: MpQp, u_min=None, u_max=None, warm_start: bool = True):
        mp = qp.problem
        super().__init__(mp.u_min if u_min is None else u_min, mp.u_max if u_max is None else u_max)
        self.qp = qp
        self.warm_start = warm_start
        self.last_solution = None
        self._ws: list[int] | None = None

    def reset(self) -> None:
        self._ws = None
        self.last_solution = None

    def compute(self, x):
        sol = self.qp.solve(x, warm_start=self._ws if self.warm_start else None)
        if not sol.optimal:
            raise MpcInfeasible(f"online QP is {sol.status.value}")
        self._ws = sol.working_set
        self.last_solution = sol
        return self.qp.to_U(sol.z, x)[: self.qp.m]


class LatticeController(Controller):
    name = "Lattice PWA"

    def __init__(self, bundle: LatticeBundle, u_min, u_max):
        super().__init__(u_min, u_max)
        self.bundle = bundle

    def compute(self, x):
        return eval_bundle(self.bundle, x)


class LqrController(Controller):
    name = "LQR"

    def __init__(self, K, u_min, u_max, x_ref=None):
        super().__init__(u_min, u_max)
        self.K = np.asarray(K, dtype=float)
        self.x_ref = np.zeros(self.K.shape[1]) if x_ref is None else np.asarray(x_ref, float)

    def compute(self, x):
        return -self.K @ (x - self.x_ref)


def control_step(c: Controller, x) -> tuple[np.ndarray, float]:
    """Clamped control input and the wall time spent computing it."""
    x = np.asarray(x, dtype=float)
    t0 = time.perf_counter()
    u = c.compute(x)
    u = np.minimum(np.maximum(u, c.u_min), c.u_max)
    elapsed = time.perf_counter() - t0
    return u, max(elapsed, 1e-12)


def optimal_cost(qp: MpQp, x, warm_start=None):
    """MPC value function J*(x) (full objective) and the QP solution."""
    sol = qp.solve(x, warm_start=warm_start)
    if not sol.optimal:
        return np.nan, sol
    return qp.problem.cost(x, qp.to_U(sol.z, x)), sol


@dataclass
class SimResult:
    controller: str
    t: np.ndarray
    x: np.ndarray  # (steps + 1, n)
    u: np.ndarray  # (steps, m)
    elapsed: np.ndarray  # (steps,)
    J_star: np.ndarray  # (steps + 1,), NaN where not evaluated
    impulse: float
    constraint_violations: list[tuple[int, str]] = field(default_factory=list)
    failed: bool = False
    message: str = ""

    @property
    def steps(self) -> int:
        return self.u.shape[0]

    @property
    def constraint_ok(self) -> bool:
        return not self.constraint_violations and not self.failed

    def median_time(self) -> float:
        """Median per-step controller time, leaving out the cold first step."""
        e = self.elapsed[1:] if self.elapsed.size > 1 else self.elapsed
        return float(np.median(e))

    def to_csv(self, path, n_wheels: int | None = None) -> None:
        n, m = self.x.shape[1], self.u.shape[1]
        header = ["t"] + [f"x{i}" for i in range(n)] + [f"u{i}" for i in range(m)] + ["elapsed_s", "J_star"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for k in range(self.x.shape[0]):
                if k < self.steps:
                    u, el = self.u[k], self.elapsed[k]
                else:
                    u, el = np.full(m, np.nan), np.nan
                w.writerow([repr(float(self.t[k]))] + [repr(float(v)) for v in self.x[k]]
                           + [repr(float(v)) for v in u] + [repr(float(el)), repr(float(self.J_star[k]))])


def _plant_step(plant, Ts, substeps):
    if isinstance(plant, SatelliteParams):
        return lambda x, u: integrate_rk4(x, u, Ts, substeps, plant)
    A, B = np.asarray(plant.A), np.asarray(plant.B)
    C = np.zeros(A.shape[0]) if getattr(plant, "C", None) is None else np.asarray(plant.C)
    return lambda x, u: A @ x + B @ u + C


def run_closed_loop(
    c: Controller,
    plant,
    x0,
    steps: int,
    Ts: float,
    substeps: int = 10,
    value_qp: MpQp | None = None,
    x_bounds: tuple | None = None,
    thruster_channels: Sequence[int] | None = None,
) -> SimResult:
    """Simulate ``steps`` sampling periods.

    ``plant`` is either :class:`SatelliteParams` (nonlinear model, RK4 with
    ``substeps`` per period) or anything with ``A``, ``B`` (and optionally
    ``C``) attributes, used as a discrete linear model.  ``value_qp`` turns on
    the J* trace; ``x_bounds`` are the state limits checked for violations.
    The impulse sums ``thruster_channels``: by default the three body torques
    on the satellite and every input on a linear plant.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    step = _plant_step(plant, Ts, substeps)
    x = x0.to_vector() if isinstance(x0, AttitudeState) else np.array(x0, dtype=float)
    n = x.size
    c.reset()
    X = np.full((steps + 1, n), np.nan)
    U = np.full((steps, c.u_min.size), np.nan)
    el = np.full(steps, np.nan)
    J = np.full(steps + 1, np.nan)
    X[0] = x
    viol: list[tuple[int, str]] = []
    failed, msg = False, ""
    ws_val = None
    k_done = 0

    def check(k, xv):
        if x_bounds is None:
            return
        lo, hi = x_bounds
        for i in np.flatnonzero((xv < lo) | (xv > hi)):
            viol.append((k, f"x{i}"))

    for k in range(steps):
        if value_qp is not None:
            if isinstance(c, OnlineMpc):
                pass  # filled from the controller's own solve below
            else:
                J[k], sol = optimal_cost(value_qp, x, ws_val)
                ws_val = sol.working_set if sol.optimal else None
        try:
            u, dt = control_step(c, x)
        except MpcInfeasible as exc:
            failed, msg = True, f"step {k}: {exc}"
            break
        if value_qp is not None and isinstance(c, OnlineMpc):
            sol = c.last_solution
            J[k] = value_qp.problem.cost(x, value_qp.to_U(sol.z, x)) if value_qp is c.qp \
                else optimal_cost(value_qp, x)[0]
        for i in np.flatnonzero((u < c.u_min) | (u > c.u_max)):
            viol.append((k, f"u{i}"))
        U[k], el[k] = u, dt
        try:
            x = step(x, u)
        except EpsOutOfRange as exc:
            failed, msg = True, f"step {k}: {exc}"
            break
        X[k + 1] = x
        check(k + 1, x)
        k_done = k + 1

    if value_qp is not None and not failed:
        J[k_done] = optimal_cost(value_qp, x, ws_val)[0]
    if failed:
        X, U, el, J = X[:k_done + 1], U[:k_done], el[:k_done], J[:k_done + 1]
    if thruster_channels is None:
        thruster_channels = range(3) if isinstance(plant, SatelliteParams) else range(U.shape[1])
    thr = list(thruster_channels)
    impulse = float(np.abs(U[:, thr]).sum() * Ts)
    t = np.arange(X.shape[0]) * Ts
    return SimResult(c.name, t, X, U, el, J, impulse, viol, failed, msg)


@dataclass
class ComparisonRow:
    controller: str
    constraint_ok: bool
    online_time_s: float
    impulse: float


def compare_controllers(results: Mapping[str, SimResult] | Sequence[SimResult]) -> tuple[list[ComparisonRow], float]:
    """Comparison rows plus the time ratio (online MPC / lattice), NaN if absent."""
    items = list(results.values()) if isinstance(results, Mapping) else list(results)
    rows = [ComparisonRow(r.controller, r.constraint_ok, r.median_time(), r.impulse) for r in items]
    by = {r.controller: r for r in rows}
    ratio = float("nan")
    if OnlineMpc.name in by and LatticeController.name in by:
        ratio = by[OnlineMpc.name].online_time_s / by[LatticeController.name].online_time_s
    return rows, ratio


def format_table(rows: Sequence[ComparisonRow], ratio: float | None = None) -> str:
    head = f"{'Method':<14}{'Constraint':>11}{'Online time (s)':>18}{'Impulse':>12}"
    lines = [head, "-" * len(head)]
    for r in rows:
        lines.append(f"{r.controller:<14}{'Y' if r.constraint_ok else 'N':>11}"
                     f"{r.online_time_s:>18.3e}{r.impulse:>12.4f}")
    if ratio is not None and np.isfinite(ratio):
        lines.append(f"time ratio online MPC / lattice: {ratio:.1f}")
    return "\n".join(lines)


def write_comparison_csv(rows: Sequence[ComparisonRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["controller", "constraint_ok", "online_time_s", "impulse"])
        for r in rows:
            w.writerow([r.controller, "Y" if r.constraint_ok else "N", repr(r.online_time_s), repr(r.impulse)])
