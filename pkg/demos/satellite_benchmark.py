"""
Satellite attitude control: online MPC, lattice PWA and LQR
===========================================================

Builds the lattice from closed-loop samples of the nonlinear plant, checks it
against the online QP, then flies all three controllers for 300 s from a
large initial attitude error.  Pass a sample count on the command line to see
how the gap estimate and the evaluation time change with lattice size.
"""

import sys

import numpy as np

from lattice_empc import RunConfig
from lattice_empc.config import default_config_dict
from lattice_empc.pipeline import build_lattice_from_config, max_law_error, simulate_controllers
from lattice_empc.simulation import compare_controllers, format_table

d = default_config_dict()
d["sampling"]["n_samples"] = int(sys.argv[1]) if len(sys.argv) > 1 else d["sampling"]["n_samples"]
cfg = RunConfig.from_dict(d)

build = build_lattice_from_config(cfg)
for k, c in enumerate(build.bundle.channels):
    print(f"input {k}: {c.n_literals} literals, {c.n_terms} terms")
err = max_law_error(build.qp, build.bundle, build.validation_x)
print(f"gap estimate {build.eps_hat:.2e}, max error vs online QP {err:.2e} "
      f"over {len(build.validation_x)} validation states")

# %%
# Closed loop on the nonlinear plant.  The wheel-speed limit is what
# separates the constrained controllers from LQR.
runs = simulate_controllers(cfg, build.qp, build.bundle, lyapunov=False)
for name, r in runs.items():
    print(f"{r.controller:12s} peak wheel speed {np.abs(r.x[:, 3]).max():7.1f} rad/s, "
          f"final rate {np.linalg.norm(r.x[-1, :3]):.1e} rad/s")

rows, ratio = compare_controllers(runs)
print(format_table(rows, ratio))
