import numpy as np
import pytest

from lattice_empc.condense import MpcProblem, condense, first_input, prediction_matrices
from lattice_empc.config import example1_problem
from lattice_empc.errors import DimensionMismatch

from oracles import sparse_mpc_first_input


@pytest.fixture(scope="module")
def ex1():
    mp = example1_problem("zero")
    return mp, condense(mp)


def test_horizon_one_prediction():
    A = np.array([[1.0, 0.1], [0.0, 0.9]])
    B = np.array([[0.0], [0.1]])
    C = np.array([0.01, -0.02])
    mp = MpcProblem(A, B, C, np.eye(2), np.eye(1), 1, -np.ones(2), np.ones(2), [-1], [1])
    Sx, Su, Sc = prediction_matrices(mp)
    np.testing.assert_array_equal(Sx, A)
    np.testing.assert_array_equal(Su, B)
    np.testing.assert_array_equal(Sc, C)


def test_identity_blocks_lower_triangular():
    mp = MpcProblem(np.eye(2), np.eye(2), None, np.eye(2), np.eye(2), 3, -np.ones(2), np.ones(2),
                    -np.ones(2), np.ones(2))
    _, Su, _ = prediction_matrices(mp)
    np.testing.assert_array_equal(Su, np.kron(np.tril(np.ones((3, 3))), np.eye(2)))


def test_prediction_matches_rollout(ex1):
    mp, _ = ex1
    Sx, Su, Sc = prediction_matrices(mp)
    rng = np.random.default_rng(0)
    for _ in range(20):
        x0, U = rng.uniform(-2, 2, 2), rng.uniform(-2, 2, mp.N)
        X = Sx @ x0 + Su @ U + Sc
        assert np.abs(X - mp.rollout(x0, U).ravel()).max() <= 1e-12


def test_structure(ex1):
    mp, qp = ex1
    assert np.abs(qp.H - qp.H.T).max() <= 1e-12
    np.linalg.cholesky(qp.H)
    assert qp.G.shape == (2 * mp.N * mp.m + 2 * mp.N * mp.n, mp.N * mp.m)
    assert qp.S.shape == (qp.G.shape[0], mp.n) and qp.W.shape == (qp.G.shape[0],)


def test_objective_identity(ex1):
    """0.5 z'Hz differs from the MPC cost only by a term independent of U."""
    mp, qp = ex1
    rng = np.random.default_rng(1)
    x0 = rng.uniform(-1, 1, 2)
    vals = []
    for _ in range(5):
        U = rng.uniform(-2, 2, mp.N)
        z = U + qp.E @ x0 + qp.e
        vals.append(mp.cost(x0, U) - 0.5 * z @ qp.H @ z)
    np.testing.assert_allclose(vals, vals[0], atol=1e-9)


def test_constraint_map_equivalence(ex1):
    mp, qp = ex1
    rng = np.random.default_rng(2)
    for _ in range(500):
        x0, U = rng.uniform(-2, 2, 2), rng.uniform(-2.5, 2.5, mp.N)
        z = U + qp.E @ x0 + qp.e
        X = mp.rollout(x0, U)
        direct = np.all(np.abs(U) <= 2) and np.all(np.abs(X) <= 2)
        # compare only away from the boundary to avoid round-off ties
        slack = np.min(np.concatenate([2 - np.abs(U), 2 - np.abs(X).ravel()]))
        if abs(slack) > 1e-9:
            assert direct == bool(np.all(qp.G @ z <= qp.W + qp.S @ x0))


def test_back_map_and_unconstrained_solution(ex1):
    mp, qp = ex1
    x = np.array([0.01, -0.02])
    sol = qp.solve(x)
    assert sol.strongly_active == []
    np.testing.assert_allclose(sol.z, 0.0, atol=1e-15)
    np.testing.assert_allclose(qp.to_U(sol.z, x), qp.unconstrained_U(x))
    # batch least squares: stack the weighted residuals of the predicted trajectory
    Sx, Su, Sc = prediction_matrices(mp)
    Qh = np.kron(np.eye(mp.N), np.sqrt(mp.Q))
    Qh[-2:, -2:] = 0.0  # P = 0
    Rh = np.sqrt(mp.R[0, 0]) * np.eye(mp.N)
    M = np.vstack([Qh @ Su, Rh])
    rhs = -np.concatenate([Qh @ (Sx @ x), np.zeros(mp.N)])
    U_ls = np.linalg.lstsq(M, rhs, rcond=None)[0]
    np.testing.assert_allclose(qp.unconstrained_U(x), U_ls, atol=1e-10)


def test_matches_sparse_formulation(ex1):
    pytest.importorskip("cvxopt")
    mp, qp = ex1
    x = np.array([1.0, 0.0])
    U_ref = sparse_mpc_first_input(mp, x)
    np.testing.assert_allclose(qp.to_U(qp.solve(x).z, x), U_ref, atol=1e-7)
    rng = np.random.default_rng(3)
    checked = 0
    while checked < 200:
        x = rng.uniform(-2, 2, 2)
        sol = qp.solve(x)
        U_ref = sparse_mpc_first_input(mp, x)
        assert sol.optimal == (U_ref is not None)
        if sol.optimal:
            assert abs(qp.to_U(sol.z, x)[0] - U_ref[0]) <= 1e-7
            checked += 1


def test_odd_symmetry(ex1):
    mp, qp = ex1
    rng = np.random.default_rng(4)
    for _ in range(50):
        x = rng.uniform(-2, 2, 2)
        a, b = qp.solve(x), qp.solve(-x)
        assert a.optimal == b.optimal
        if a.optimal:
            np.testing.assert_allclose(qp.to_U(a.z, x), -qp.to_U(b.z, -x), atol=1e-9)


def test_equilibrium_gives_zero_input(ex1):
    _, qp = ex1
    sol = qp.solve(np.zeros(2))
    assert first_input(qp.to_U(sol.z, np.zeros(2)), 1)[0] == 0.0


def test_first_input():
    assert first_input([3.0, 2.0, 1.0], 1).tolist() == [3.0]
    assert first_input([1.0, 2.0, 3.0, 4.0], 2).tolist() == [1.0, 2.0]
    with pytest.raises(DimensionMismatch):
        first_input([1.0, 2.0, 3.0], 2)


def test_infinite_bounds_dropped_and_terminal_set():
    A = np.array([[1.0, 0.1], [0.0, 1.0]])
    B = np.array([[0.005], [0.1]])
    mp = MpcProblem(A, B, None, np.eye(2), np.eye(1), 4, [-np.inf, -1], [np.inf, 1], [-1], [1],
                    terminal_set=(np.vstack([np.eye(2), -np.eye(2)]), 0.1 * np.ones(4)))
    qp = condense(mp)
    assert qp.G.shape[0] == 2 * 4 + 2 * 4 + 4
    assert not qp.solve(np.array([0.3, 0.0])).optimal  # cannot reach the set in 4 steps
    x = np.array([0.15, 0.0])
    sol = qp.solve(x)
    assert sol.optimal
    U = qp.to_U(sol.z, x)
    assert np.abs(mp.rollout(x, U)[-1]).max() <= 0.1 + 1e-9


def test_problem_validation():
    args = (np.eye(2), np.eye(2)[:, :1], None, np.eye(2), np.eye(1))
    with pytest.raises(ValueError):
        MpcProblem(*args, 0, -np.ones(2), np.ones(2), [-1], [1])
    with pytest.raises(ValueError):
        MpcProblem(*args, 2, np.ones(2), np.ones(2), [-1], [1])
    with pytest.raises(ValueError):
        MpcProblem(np.eye(2), np.eye(2)[:, :1], None, np.eye(2), np.zeros((1, 1)), 2,
                   -np.ones(2), np.ones(2), [-1], [1])
    with pytest.raises(DimensionMismatch):
        MpcProblem(np.eye(2), np.eye(3), None, np.eye(2), np.eye(1), 2, -1, 1, -1, 1)
