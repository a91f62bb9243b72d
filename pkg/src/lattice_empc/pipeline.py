"""End-to-end orchestration: condense, sample, build the lattice, simulate."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .condense import MpQp, MpcProblem, condense
from .config import RunConfig
from .explicit_law import AffinePiece, collect_pieces, sample_states
from .lattice import LatticeBundle, build_bundle, estimate_error_bound, eval_bundle
from .linalg_qp import lqr_gain
from .satellite import AttitudeState, SatelliteParams, euler_to_eps, integrate_rk4
from .simulation import LatticeController, LqrController, OnlineMpc, SimResult, run_closed_loop

__all__ = [
    "LatticeBuild",
    "perturbed_starts",
    "closed_loop_states",
    "build_lattice_from_config",
    "max_law_error",
    "make_controllers",
    "simulate_controllers",
]


@dataclass
class LatticeBuild:
    qp: MpQp
    samples: list[tuple[np.ndarray, AffinePiece]]
    bundle: LatticeBundle
    validation_x: np.ndarray
    eps_hat: float
    seconds: dict[str, float] = field(default_factory=dict)


def perturbed_starts(x0: AttitudeState, count: int, rng: np.random.Generator,
                     euler_deg: float, rate_frac: float, wheel_rad_s: float,
                     wheel_limit: float | None = None) -> list[np.ndarray]:
    """Initial states scattered around ``x0`` (Euler angles, rates and wheel speed)."""
    eul = x0.euler_deg()
    out = []
    for _ in range(count):
        e = eul + rng.uniform(-euler_deg, euler_deg, 3)
        e[1] = np.clip(e[1], -89.0, 89.0)
        w = x0.omega_ob * (1.0 + rng.uniform(-rate_frac, rate_frac, 3))
        ww = x0.omega_w + rng.uniform(-wheel_rad_s, wheel_rad_s, x0.omega_w.size)
        if wheel_limit is not None:
            ww = np.clip(ww, -0.95 * wheel_limit, 0.95 * wheel_limit)
        _, eps = euler_to_eps(*np.deg2rad(e))
        out.append(np.concatenate([w, ww, eps]))
    return out


def _nonlinear_step(p: SatelliteParams, Ts: float, substeps: int):
    return lambda x, u: integrate_rk4(x, u, Ts, substeps, p)


def closed_loop_states(qp: MpQp, starts, steps: int, step) -> np.ndarray:
    """States visited by warm-started online MPC from each start."""
    out = []
    for x in starts:
        x = np.array(x, dtype=float)
        ws = None
        for _ in range(steps):
            sol = qp.solve(x, warm_start=ws)
            if not sol.optimal:
                break
            out.append(x)
            ws = sol.working_set
            x = step(x, qp.to_U(sol.z, x)[:qp.m])
    return np.array(out)


def max_law_error(qp: MpQp, bundle: LatticeBundle, X) -> float:
    """Largest |lattice - online QP first input| over the states in ``X``."""
    err = 0.0
    ws = None
    for x in np.atleast_2d(X):
        sol = qp.solve(x, warm_start=ws)
        ws = sol.working_set
        u = qp.to_U(sol.z, x)[:qp.m]
        err = max(err, float(np.abs(eval_bundle(bundle, x) - u).max()))
    return err


def build_lattice_from_config(cfg: RunConfig, qp: MpQp | None = None) -> LatticeBuild:
    p = cfg.params
    s, v = cfg.sampling, cfg.validation
    secs: dict[str, float] = {}
    t0 = time.perf_counter()
    if qp is None:
        qp = condense(cfg.problem())
    secs["condense"] = time.perf_counter() - t0
    x0 = cfg.x0
    step = _nonlinear_step(p, cfg.Ts, int(cfg.raw["simulation"]["substeps"]))
    mp = qp.problem

    t0 = time.perf_counter()
    if s["mode"] == "trajectory":
        rng = np.random.default_rng(s["seed"])
        starts = [x0.to_vector()] + perturbed_starts(
            x0, s["perturbed_starts"], rng, s["perturb_euler_deg"], s["perturb_rate_frac"],
            s["perturb_wheel_rad_s"], p.omega_w_max)
        states = sample_states(qp, (mp.x_min, mp.x_max), s["n_samples"], seed=s["seed"],
                               mode="trajectory", step=step, initial_states=starts,
                               rollout_steps=s["rollout_steps"])
    else:
        states = sample_states(qp, (mp.x_min, mp.x_max), s["n_samples"], seed=s["seed"])
    secs["sample"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    samples = collect_pieces(qp, states)
    secs["pieces"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    bundle = build_bundle(samples, qp.m)
    secs["build"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    vrng = np.random.default_rng(v["seed"])
    vstarts = [x0.to_vector()] + perturbed_starts(
        x0, v["starts"], vrng, s["perturb_euler_deg"], s["perturb_rate_frac"],
        s["perturb_wheel_rad_s"], p.omega_w_max)
    pool = closed_loop_states(qp, vstarts, v["steps"], step)
    pick = np.sort(vrng.choice(len(pool), size=min(v["n_states"], len(pool)), replace=False))
    validation_x = pool[pick]
    eps_hat = estimate_error_bound(samples, validation_x, range(qp.m))
    secs["validate"] = time.perf_counter() - t0
    return LatticeBuild(qp, samples, bundle, validation_x, eps_hat, secs)


def make_controllers(names, qp: MpQp, bundle: LatticeBundle | None, mp: MpcProblem):
    out = []
    for name in names:
        if name == "mpc":
            out.append(OnlineMpc(qp))
        elif name == "lattice":
            if bundle is None:
                raise ValueError("lattice controller requested without a lattice")
            out.append(LatticeController(bundle, mp.u_min, mp.u_max))
        elif name == "lqr":
            out.append(LqrController(lqr_gain(mp.A, mp.B, mp.Q, mp.R), mp.u_min, mp.u_max))
        else:
            raise ValueError(f"unknown controller {name!r}")
    return out


def simulate_controllers(cfg: RunConfig, qp: MpQp, bundle: LatticeBundle | None,
                         names=None, lyapunov: bool = True) -> dict[str, SimResult]:
    sim = cfg.raw["simulation"]
    names = cfg.controllers if names is None else list(names)
    results = {}
    for name, c in zip(names, make_controllers(names, qp, bundle, qp.problem)):
        results[name] = run_closed_loop(
            c, cfg.params, cfg.x0, sim["steps"], cfg.Ts, sim["substeps"],
            value_qp=qp if lyapunov and name != "lqr" else None,
            x_bounds=cfg.x_bounds,
        )
    return results
