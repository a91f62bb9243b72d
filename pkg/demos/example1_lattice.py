"""
Two-state benchmark: from three QP solutions to a lattice control law
=====================================================================

A double-integrator-like plant with |x_i| <= 2 and |u| <= 2, horizon 5.
Three sample states already expose the whole structure of the explicit law
near the origin: one unconstrained gain and the two saturation levels.
"""

import numpy as np

from lattice_empc import (build_bundle, build_lattice, collect_pieces, condense, estimate_error_bound,
                          eval_bundle, example1_problem, sample_states, simplify)
from lattice_empc.config import EXAMPLE1_X0
from lattice_empc.simulation import LatticeController, OnlineMpc, run_closed_loop

mp = example1_problem("zero")
qp = condense(mp)

# %%
# Local affine laws at three states: left saturated, origin, right saturated.
points = np.array([[-1.5, 0.5], [0.0, 0.0], [1.0, 0.5]])
samples = collect_pieces(qp, points)
for x, piece in samples:
    print(f"x = {x}: u = {piece.f[0].round(4)} x + {piece.g[0]:+.4f}")

lat = build_lattice(samples)
print("terms (literal indices):", lat.terms)
print("after removing duplicate and dominated terms:", simplify(lat).terms)

# %%
# The three-point lattice already drives the state to the origin, matching
# online MPC step for step.
bundle = build_bundle(samples, 1)
mpc = run_closed_loop(OnlineMpc(qp), mp, EXAMPLE1_X0, 50, 1.0)
pwa = run_closed_loop(LatticeController(bundle, mp.u_min, mp.u_max), mp, EXAMPLE1_X0, 50, 1.0)
print("max |u_lattice - u_mpc| along the run:", np.abs(pwa.u - mpc.u).max())
print("final state:", pwa.x[-1])

# %%
# Away from the origin the three literals are not enough.  Uniform samples
# over the box reveal more pieces; the upper/lower gap estimate shrinks as
# pieces are found, but it only measures disagreement between the two
# lattice forms, so it cannot see pieces that were never sampled.
box = (mp.x_min, mp.x_max)
check = np.array(sample_states(qp, box, 400, seed=99))
for n in (3, 30, 300):
    xs = sample_states(qp, box, n, seed=1)
    s = collect_pieces(qp, xs)
    b = build_bundle(s, 1)
    err = max(abs(eval_bundle(b, x)[0] - qp.to_U(qp.solve(x).z, x)[0]) for x in check)
    print(f"{n:4d} samples: {b.channels[0].n_literals} literals, "
          f"gap estimate {estimate_error_bound(s, check):.2e}, true max error {err:.2e}")
