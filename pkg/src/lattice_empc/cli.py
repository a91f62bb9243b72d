"""Command-line front end (``python -m lattice_empc``).

Exit codes: 0 ok, 2 configuration error, 3 numerical failure, 4 failed check.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import lattice as lat_io
from .condense import condense
from .config import EXAMPLE1_X0, RunConfig, default_config_dict, example1_problem
from .errors import ConfigError, LatticeMpcError, ParseError
from .explicit_law import collect_pieces
from .lattice import build_bundle, build_lattice, simplify
from .pipeline import build_lattice_from_config, max_law_error, simulate_controllers
from .satellite import eps_to_euler
from .simulation import (LatticeController, OnlineMpc, compare_controllers, format_table,
                         run_closed_loop, write_comparison_csv)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CHECK = 0, 2, 3, 4

EXAMPLE1_POINTS = np.array([[-1.5, 0.5], [0.0, 0.0], [1.0, 0.5]])


def _version() -> str:
    from importlib.metadata import PackageNotFoundError, version
    try:
        return version("artifact")
    except PackageNotFoundError:
        return "unknown"


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(out: Path, cfg: RunConfig | None, artifacts: list[Path], extra: dict) -> Path:
    man = {
        "package_version": _version(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "config_sha256": cfg.digest() if cfg else None,
        "config": cfg.raw if cfg else None,
        "seeds": ({"sampling": cfg.sampling["seed"], "validation": cfg.validation["seed"]}
                  if cfg else None),
        "artifacts": {p.name: _sha256(p) for p in artifacts},
    }
    man.update(extra)
    path = out / "manifest.json"
    path.write_text(json.dumps(man, indent=2, sort_keys=True))
    return path


def _load_config(path) -> RunConfig:
    return RunConfig.default() if path is None else RunConfig.from_json(path)


def _out_dir(args, cfg: RunConfig | None) -> Path:
    out = Path(args.out) if getattr(args, "out", None) else (cfg.output_dir if cfg else Path("."))
    out.mkdir(parents=True, exist_ok=True)
    return out


# example1 ---------------------------------------------------------------

def cmd_example1(args) -> int:
    out = _out_dir(args, None)
    mp = example1_problem("zero")
    qp = condense(mp)
    samples = collect_pieces(qp, EXAMPLE1_POINTS)
    raw = build_lattice(samples, 0)
    lat = simplify(raw)
    a, b = raw.a, raw.b
    print("literals recovered at the three sample points:")
    for j in range(raw.n_literals):
        print(f"  l{j + 1}(x) = [{a[j, 0]:.2f}, {a[j, 1]:.2f}] x + {b[j]:.2f}")
    fmt = lambda t: "min{" + ",".join(f"l{j + 1}" for j in t) + "}"  # noqa: E731
    print("terms:            " + ", ".join(fmt(t) for t in raw.terms))
    used = [int(np.flatnonzero((raw.a == lat.a[j]).all(1) & (raw.b == lat.b[j]))[0]) for j in range(lat.n_literals)]
    print("simplified terms: " + ", ".join(fmt([used[j] for j in t]) for t in lat.terms))

    bundle = build_bundle(samples, 1)
    steps = 50
    runs = {
        "mpc": run_closed_loop(OnlineMpc(qp), mp, EXAMPLE1_X0, steps, 1.0, value_qp=qp,
                               x_bounds=(mp.x_min, mp.x_max), thruster_channels=[0]),
        "lattice": run_closed_loop(LatticeController(bundle, mp.u_min, mp.u_max), mp, EXAMPLE1_X0,
                                   steps, 1.0, value_qp=qp, x_bounds=(mp.x_min, mp.x_max),
                                   thruster_channels=[0]),
    }
    files = []
    for name, r in runs.items():
        path = out / f"example1_{name}.csv"
        r.to_csv(path)
        files.append(path)
    lat_path = out / "example1_lattice.json"
    lat_io.save(bundle, lat_path)
    files.append(lat_path)

    unc = [j for j in range(raw.n_literals) if np.abs(a[j]).max() > 0]
    checks = {
        "unconstrained literal [-5.72, -3.73]": len(unc) == 1
        and np.abs(a[unc[0]] - [-5.72, -3.73]).max() <= 0.005 and abs(b[unc[0]]) <= 0.005,
        "saturation literals +2 and -2": sorted(b[j] for j in range(raw.n_literals) if j not in unc) == [-2.0, 2.0],
        "terms {l1,l2},{l1,l2},{l1,l3}": [set(t) for t in raw.terms] == [{0, 1}, {0, 1}, {0, 2}],
        "two simplified terms": lat.n_terms == 2,
        "closed loop reaches |x| < 1e-3 in 50 steps": all(
            not r.failed and np.linalg.norm(r.x[-1]) < 1e-3 for r in runs.values()),
    }
    _write_manifest(out, None, files, {"example": "example1", "checks": {k: bool(v) for k, v in checks.items()}})
    ok = True
    for name, passed in checks.items():
        print(f"[{'PASS' if passed else 'FAIL'}] {name}")
        ok &= bool(passed)
    return EXIT_OK if ok else EXIT_CHECK


# satellite --------------------------------------------------------------

def _report_build(build) -> None:
    for k, c in enumerate(build.bundle.channels):
        print(f"channel {k}: {c.n_literals} literals, {c.n_terms} terms")
    print(f"estimated error bound eps_hat = {build.eps_hat:.3e}")


def _simulate_and_compare(cfg, qp, bundle, out: Path, files: list[Path]) -> tuple[dict, bool]:
    results = simulate_controllers(cfg, qp, bundle)
    ok = True
    for name, r in results.items():
        path = out / f"sim_{name}.csv"
        r.to_csv(path)
        files.append(path)
        if r.failed:
            print(f"{r.controller}: run stopped ({r.message})", file=sys.stderr)
            ok = False
    rows, ratio = compare_controllers(results)
    text = format_table(rows, ratio)
    print(text)
    write_comparison_csv(rows, out / "comparison.csv")
    (out / "comparison.txt").write_text(text + "\n")
    summary = {r.controller: {"constraint_ok": r.constraint_ok, "impulse": r.impulse,
                              "online_time_s": r.online_time_s} for r in rows}
    summary["time_ratio"] = ratio
    return summary, ok


def cmd_pipeline(args) -> int:
    cfg = _load_config(args.config)
    out = _out_dir(args, cfg)
    build = build_lattice_from_config(cfg)
    _report_build(build)
    lat_path = out / "lattice.json"
    lat_io.save(build.bundle, lat_path)
    files = [lat_path]
    err = max_law_error(build.qp, build.bundle, build.validation_x)
    print(f"max |lattice - QP| over {len(build.validation_x)} validation states = {err:.3e}")
    summary, ok = _simulate_and_compare(cfg, build.qp, build.bundle, out, files)
    _write_manifest(out, cfg, [lat_path], {
        "eps_hat": build.eps_hat, "validation_error": err, "timing_s": build.seconds,
        "comparison": summary, "trajectory_files": [p.name for p in files[1:]],
    })
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_build_lattice(args) -> int:
    cfg = _load_config(args.config)
    out = _out_dir(args, cfg)
    build = build_lattice_from_config(cfg)
    _report_build(build)
    path = Path(args.lattice) if args.lattice else out / "lattice.json"
    lat_io.save(build.bundle, path)
    print(f"wrote {path}")
    return EXIT_OK


def _bundle_for(cfg, path, qp):
    bundle = lat_io.load(path)
    if bundle.n != qp.n or bundle.m != qp.m:
        raise ConfigError(f"lattice has n={bundle.n}, m={bundle.m}; problem has n={qp.n}, m={qp.m}")
    return bundle


def cmd_simulate(args) -> int:
    cfg = _load_config(args.config)
    out = _out_dir(args, cfg)
    qp = condense(cfg.problem())
    bundle = _bundle_for(cfg, args.lattice, qp) if args.lattice else None
    if bundle is None and "lattice" in cfg.controllers:
        raise ConfigError("the lattice controller needs --lattice")
    files: list[Path] = []
    _, ok = _simulate_and_compare(cfg, qp, bundle, out, files)
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_bench(args) -> int:
    cfg = _load_config(args.config)
    out = _out_dir(args, cfg)
    qp = condense(cfg.problem())
    if args.lattice:
        bundle = _bundle_for(cfg, args.lattice, qp)
    else:
        bundle = build_lattice_from_config(cfg, qp).bundle
    results = simulate_controllers(cfg, qp, bundle, lyapunov=False)
    rows, ratio = compare_controllers(results)
    text = format_table(rows, ratio)
    print(text)
    write_comparison_csv(rows, out / "comparison.csv")
    (out / "comparison.txt").write_text(text + "\n")
    return EXIT_OK if not any(r.failed for r in results.values()) else EXIT_NUMERIC


# plotdata ---------------------------------------------------------------

def read_sim_csv(path):
    """Columns and float rows of a trajectory CSV written by ``SimResult.to_csv``."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise ParseError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    if not body:
        raise ParseError(f"{path}: no data rows")
    if not header or header[0] != "t" or "elapsed_s" not in header:
        raise ParseError(f"{path}: not a trajectory CSV (header {header[:3]}...)")
    data = np.empty((len(body), len(header)))
    for i, r in enumerate(body, start=2):
        if len(r) != len(header):
            raise ParseError(f"{path}, line {i}: expected {len(header)} fields, got {len(r)}")
        try:
            data[i - 2] = [float(v) for v in r]
        except ValueError as exc:
            raise ParseError(f"{path}, line {i}: {exc}") from exc
    return header, data


def plot_tables(header, data) -> dict[str, tuple[list[str], np.ndarray]]:
    """Four tidy tables: body rates, wheel speeds, torques, Euler angles (deg)."""
    xi = [i for i, h in enumerate(header) if h.startswith("x")]
    ui = [i for i, h in enumerate(header) if h.startswith("u")]
    L = len(xi) - 6
    if L < 1 or len(ui) != 3 + L:
        raise ParseError(f"trajectory has {len(xi)} states and {len(ui)} inputs; expected 6+L and 3+L")
    t = data[:, :1]
    X = data[:, xi]
    eps = X[:, 3 + L:]
    eul = np.empty((len(data), 3))
    for k, e in enumerate(eps):
        eta = np.sqrt(max(0.0, 1.0 - e @ e))
        eul[k] = np.rad2deg(eps_to_euler(eta, e))
    wl = [f"omega_w{j + 1}_rad_s" for j in range(L)]
    tl = [f"tau_w{j + 1}_Nm" for j in range(L)]
    return {
        "omega_ob": (["t_s", "omega_x_rad_s", "omega_y_rad_s", "omega_z_rad_s"], np.hstack([t, X[:, :3]])),
        "omega_w": (["t_s"] + wl, np.hstack([t, X[:, 3:3 + L]])),
        "torque": (["t_s", "tau_x_Nm", "tau_y_Nm", "tau_z_Nm"] + tl, np.hstack([t, data[:, ui]])),
        "euler_deg": (["t_s", "phi_deg", "theta_deg", "psi_deg"], np.hstack([t, eul])),
    }


def cmd_plotdata(args) -> int:
    header, data = read_sim_csv(args.csv)
    out = Path(args.out) if args.out else Path(args.csv).parent
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.csv).stem
    for name, (cols, arr) in plot_tables(header, data).items():
        path = out / f"{stem}_{name}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            w.writerows([[repr(float(v)) for v in row] for row in arr])
        print(f"wrote {path}")
    return EXIT_OK


def cmd_config(args) -> int:
    text = json.dumps(default_config_dict(), indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lattice_empc",
                                 description="Lattice PWA approximation of explicit linear MPC.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("example1", help="two-state benchmark: literals, terms, closed loop")
    p.add_argument("--out", default="example1_out")
    p.set_defaults(func=cmd_example1)

    for name, func, hlp in (
        ("pipeline", cmd_pipeline, "condense, sample, build lattice, simulate and compare"),
        ("build-lattice", cmd_build_lattice, "build and save the lattice only"),
        ("simulate", cmd_simulate, "closed-loop runs using a saved lattice"),
        ("bench", cmd_bench, "controller comparison table only"),
    ):
        p = sub.add_parser(name, help=hlp)
        p.add_argument("--config", help="RunConfig JSON (default: built-in satellite scenario)")
        p.add_argument("--out", help="output directory (default: output.dir from the config)")
        if name in ("build-lattice",):
            p.add_argument("--lattice", help="lattice file to write")
        if name in ("simulate", "bench"):
            p.add_argument("--lattice", help="saved lattice JSON")
        p.set_defaults(func=func)

    p = sub.add_parser("plotdata", help="split a trajectory CSV into plot-ready tables")
    p.add_argument("csv")
    p.add_argument("--out")
    p.set_defaults(func=cmd_plotdata)

    p = sub.add_parser("config", help="print the default configuration")
    p.add_argument("--out")
    p.set_defaults(func=cmd_config)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except LatticeMpcError as exc:
        print(f"numerical failure ({type(exc).__module__}.{type(exc).__name__}): {exc}",
              file=sys.stderr)
        return EXIT_NUMERIC
