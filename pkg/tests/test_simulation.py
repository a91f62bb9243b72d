import csv

import numpy as np
import pytest

from lattice_empc.condense import condense
from lattice_empc.config import EXAMPLE1_X0, example1_problem
from lattice_empc.explicit_law import collect_pieces, sample_states
from lattice_empc.lattice import build_bundle
from lattice_empc.linalg_qp import lqr_gain
from lattice_empc.satellite import AttitudeState, SatelliteParams
from lattice_empc.simulation import (LatticeController, LqrController, OnlineMpc, compare_controllers,
                                     control_step, format_table, optimal_cost, run_closed_loop,
                                     write_comparison_csv)


@pytest.fixture(scope="module")
def ex1():
    mp = example1_problem("zero")
    return mp, condense(mp)


@pytest.fixture(scope="module")
def ex1_lattice(ex1):
    _, qp = ex1
    xs = sample_states(qp, (-2 * np.ones(2), 2 * np.ones(2)), 400, seed=0)
    return build_bundle(collect_pieces(qp, xs), 1)


def test_origin_stays_at_rest(ex1):
    mp, qp = ex1
    for c in (OnlineMpc(qp), LqrController(lqr_gain(mp.A, mp.B, mp.Q, mp.R), mp.u_min, mp.u_max)):
        r = run_closed_loop(c, mp, np.zeros(2), 20, 0.1)
        assert np.all(r.x == 0.0) and np.all(r.u == 0.0)
        assert r.impulse == 0.0 and r.constraint_ok


def test_satellite_equilibrium_with_lqr():
    p = SatelliteParams.nominal()
    K = np.ones((4, 7))
    x0 = AttitudeState.from_euler_deg([0, 0, 0], [0.0], [0, 0, 0])
    r = run_closed_loop(LqrController(K, -p.u_max, p.u_max), p, x0, 10, 0.1)
    assert np.abs(r.x).max() <= 1e-12
    assert r.impulse == 0.0


def test_saturating_controller_is_clamped(ex1):
    mp, _ = ex1
    c = LqrController(100.0 * np.ones((1, 2)), mp.u_min, mp.u_max)
    u, dt = control_step(c, np.array([1.0, 1.0]))
    assert u.tolist() == [-2.0] and dt > 0
    r = run_closed_loop(c, mp, EXAMPLE1_X0, 30, 0.1)
    assert np.all(np.abs(r.u) <= 2.0)
    assert r.impulse == pytest.approx(np.abs(r.u).sum() * 0.1)


def test_state_violations_recorded(ex1):
    mp, _ = ex1
    c = LqrController(np.zeros((1, 2)), mp.u_min, mp.u_max)  # open loop, x2 drifts
    r = run_closed_loop(c, mp, [0.0, 1.9], 40, 0.1, x_bounds=(np.full(2, -0.5), np.full(2, 0.5)))
    assert not r.constraint_ok
    assert r.constraint_violations[0][0] == 1


def test_infeasible_start_marks_failure(ex1):
    mp, qp = ex1
    r = run_closed_loop(OnlineMpc(qp), mp, [5.0, 5.0], 10, 0.1)
    assert r.failed and "step 0" in r.message
    assert r.steps == 0 and not r.constraint_ok


def test_deterministic_runs(ex1, ex1_lattice):
    mp, qp = ex1
    for make in (lambda: OnlineMpc(qp), lambda: LatticeController(ex1_lattice, mp.u_min, mp.u_max)):
        a = run_closed_loop(make(), mp, EXAMPLE1_X0, 50, 0.1)
        b = run_closed_loop(make(), mp, EXAMPLE1_X0, 50, 0.1)
        assert np.array_equal(a.x, b.x) and np.array_equal(a.u, b.u)


def test_lattice_tracks_online_mpc(ex1, ex1_lattice):
    mp, qp = ex1
    a = run_closed_loop(OnlineMpc(qp), mp, EXAMPLE1_X0, 50, 0.1)
    b = run_closed_loop(LatticeController(ex1_lattice, mp.u_min, mp.u_max), mp, EXAMPLE1_X0, 50, 0.1)
    np.testing.assert_allclose(b.u, a.u, atol=1e-9)
    assert np.linalg.norm(b.x[-1]) < 1e-3
    rows, ratio = compare_controllers([a, b])
    assert [r.controller for r in rows] == ["Linear MPC", "Lattice PWA"]
    assert rows[0].impulse == pytest.approx(rows[1].impulse, rel=1e-9)
    assert np.isfinite(ratio) and ratio > 0
    text = format_table(rows, ratio)
    assert "Linear MPC" in text and "time ratio" in text


def test_comparison_without_lattice_has_nan_ratio(ex1):
    mp, qp = ex1
    r = run_closed_loop(OnlineMpc(qp), mp, EXAMPLE1_X0, 5, 0.1)
    rows, ratio = compare_controllers({"mpc": r})
    assert len(rows) == 1 and np.isnan(ratio)


def test_lyapunov_decrease_linear_plant():
    mp = example1_problem("dare")
    qp = condense(mp)
    r = run_closed_loop(OnlineMpc(qp), mp, EXAMPLE1_X0, 200, 0.1, value_qp=qp)
    assert not r.failed
    for k in range(r.steps):
        J0, J1 = r.J_star[k], r.J_star[k + 1]
        assert J1 <= J0 - mp.stage_cost(r.x[k], r.u[k]) + 1e-6


def test_optimal_cost_matches_problem_cost(ex1):
    mp, qp = ex1
    x = np.array([0.5, -0.3])
    J, sol = optimal_cost(qp, x)
    assert J == pytest.approx(mp.cost(x, qp.to_U(sol.z, x)))
    J_bad, _ = optimal_cost(qp, np.array([5.0, 5.0]))
    assert np.isnan(J_bad)


def test_csv_outputs(tmp_path, ex1):
    mp, qp = ex1
    r = run_closed_loop(OnlineMpc(qp), mp, EXAMPLE1_X0, 10, 0.1, value_qp=qp)
    path = tmp_path / "sim.csv"
    r.to_csv(path)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "x0", "x1", "u0", "elapsed_s", "J_star"]
    assert len(rows) == 12
    assert [float(v) for v in rows[1][1:3]] == r.x[0].tolist()
    assert rows[-1][3] == "nan"
    rows_c, ratio = compare_controllers([r])
    write_comparison_csv(rows_c, tmp_path / "cmp.csv")
    assert (tmp_path / "cmp.csv").read_text().splitlines()[1].startswith("Linear MPC,Y,")
