import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lattice_empc.condense import condense
from lattice_empc.config import example1_problem
from lattice_empc.errors import EmptySamples, ParseError, VersionMismatch
from lattice_empc.explicit_law import AffinePiece, collect_pieces
from lattice_empc.lattice import (LatticeBundle, LatticePwa, build_bundle, build_lattice, dumps,
                                  estimate_error_bound, eval_bundle, eval_lattice, load, loads,
                                  lower_upper, save, simplify)

# four literals on [0, 7]: l1 = x, l2 = 6 - x, l3 = 2x - 7, l4 = 0.5x + 1
LIT_A = np.array([1.0, -1.0, 2.0, 0.5])
LIT_B = np.array([0.0, 6.0, -7.0, 1.0])
FIXTURE_X = [1.0, 2.5, 3.2, 4.0, 5.0, 6.0]
FIXTURE_LOCAL = [0, 0, 1, 1, 2, 3]  # active literal in each base region


def fixture_target(x):
    l = LIT_A * x + LIT_B
    return max(min(l[0], l[1]), min(l[0], l[2], l[3]))


def fixture_samples():
    return [(np.array([x]), AffinePiece([[LIT_A[j]]], [LIT_B[j]])) for x, j in zip(FIXTURE_X, FIXTURE_LOCAL)]


def test_fixture_local_literals_are_active():
    for x, j in zip(FIXTURE_X, FIXTURE_LOCAL):
        assert fixture_target(x) == pytest.approx(LIT_A[j] * x + LIT_B[j], abs=1e-15)


def test_fixture_terms_and_irredundant_form():
    lat = build_lattice(fixture_samples())
    np.testing.assert_array_equal(lat.a[:, 0], LIT_A)
    np.testing.assert_array_equal(lat.b, LIT_B)
    assert [set(t) for t in lat.terms] == [{0, 1, 3}, {0, 1}, {0, 1}, {0, 1, 3}, {0, 2, 3}, {0, 2, 3}]
    s = simplify(lat)
    assert sorted(set(t) for t in s.terms) == sorted([{0, 1}, {0, 2, 3}], key=sorted)
    grid = np.linspace(0.0, 7.0, 1000)
    for x in grid:
        v = eval_lattice(s, [x])
        assert v == pytest.approx(eval_lattice(lat, [x]), abs=1e-12)
        assert v == pytest.approx(fixture_target(x), abs=1e-12)


def test_fixture_error_bound_is_zero_when_all_regions_sampled():
    grid = np.linspace(0.0, 7.0, 1000)[:, None]
    assert estimate_error_bound(fixture_samples(), grid) <= 1e-12


# random max-min targets -------------------------------------------------

def random_target(rng, n=2, L=6, K=3):
    a = rng.standard_normal((L, n))
    b = rng.standard_normal(L)
    terms = [tuple(sorted(rng.choice(L, size=rng.integers(1, 4), replace=False))) for _ in range(K)]
    return LatticePwa(a, b, tuple(terms))


def local_piece(target, x):
    """Literal that attains the target value at x (the active affine piece)."""
    j = active_literal(target, x)
    return AffinePiece(target.a[j:j + 1], target.b[j:j + 1])


GRID = np.stack(np.meshgrid(np.linspace(-2, 2, 150), np.linspace(-2, 2, 150)), -1).reshape(-1, 2)


def active_literal(target, x):
    vals = target.a @ x + target.b
    best_t = max(target.terms, key=lambda t: vals[list(t)].min())
    return min(best_t, key=lambda k: vals[k])


def sample_set(seed, n_pts=60):
    """Random samples plus one grid witness per affine piece the target actually uses."""
    rng = np.random.default_rng(seed)
    target = random_target(rng)
    witnesses = {}
    for x in GRID:
        witnesses.setdefault(active_literal(target, x), x)
    X = np.vstack([rng.uniform(-2, 2, (n_pts, 2)), list(witnesses.values())])
    X = X[rng.permutation(len(X))]
    return target, [(x, local_piece(target, x)) for x in X], rng


seeds = st.integers(0, 2**31 - 1)


@settings(max_examples=25, deadline=None)
@given(seed=seeds)
def test_interpolates_samples(seed):
    _, samples, _ = sample_set(seed)
    lat = build_lattice(samples)
    for x, pc in samples:
        assert abs(eval_lattice(lat, x) - pc(x)[0]) <= 1e-9


@settings(max_examples=10, deadline=None)
@given(seed=seeds)
def test_continuity(seed):
    _, samples, rng = sample_set(seed)
    lat = build_lattice(samples)
    lip = np.linalg.norm(lat.a, axis=1).max()
    X = rng.uniform(-2, 2, (10_000, 2))
    d = rng.standard_normal((10_000, 2))
    d *= 1e-6 / np.linalg.norm(d, axis=1, keepdims=True)
    for x, dx in zip(X, d):
        assert abs(eval_lattice(lat, x + dx) - eval_lattice(lat, x)) <= lip * 1e-6 * (1 + 1e-9) + 1e-15


@settings(max_examples=10, deadline=None)
@given(seed=seeds)
def test_order_invariance_and_simplify(seed):
    _, samples, rng = sample_set(seed)
    lat = build_lattice(samples)
    perm = [samples[i] for i in rng.permutation(len(samples))]
    lat_p = build_lattice(perm)
    s = simplify(lat)
    grid = np.stack(np.meshgrid(np.linspace(-2, 2, 100), np.linspace(-2, 2, 100)), -1).reshape(-1, 2)
    for x in grid:
        v = eval_lattice(lat, x)
        assert abs(eval_lattice(lat_p, x) - v) <= 1e-12
        assert abs(eval_lattice(s, x) - v) <= 1e-12
    s2 = simplify(s)
    assert s2.terms == s.terms
    np.testing.assert_array_equal(s2.a, s.a)


@settings(max_examples=15, deadline=None)
@given(seed=seeds)
def test_monotone_refinement(seed):
    target, samples, rng = sample_set(seed, 30)
    extra = [(x, local_piece(target, x)) for x in rng.uniform(-2, 2, (10, 2))]
    bigger = build_lattice(samples + extra)
    for x, pc in samples:
        assert abs(eval_lattice(bigger, x) - pc(x)[0]) <= 1e-9


@settings(max_examples=15, deadline=None)
@given(seed=seeds)
def test_both_forms_interpolate_and_gap_bounds_them(seed):
    _, samples, rng = sample_set(seed)
    upper, neg = lower_upper(samples)
    for x, pc in samples:
        assert abs(eval_lattice(upper, x) - pc(x)[0]) <= 1e-9
        assert abs(-eval_lattice(neg, x) - pc(x)[0]) <= 1e-9
    V = rng.uniform(-2, 2, (300, 2))
    eps = estimate_error_bound(samples, V)
    assert eps >= 0.0
    for x in V:
        assert abs(eval_lattice(upper, x) + eval_lattice(neg, x)) <= eps + 1e-12


def test_lower_form_can_exceed_upper_off_samples():
    # every piece sampled, the max-min form is exact here, the min-max form is not
    target, samples, _ = sample_set(137)
    upper, neg = lower_upper(samples)
    x = np.array([1.6846464, 1.44980543])
    assert eval_lattice(upper, x) == pytest.approx(eval_lattice(target, x), abs=1e-8)
    assert -eval_lattice(neg, x) > eval_lattice(upper, x) + 0.2
    assert estimate_error_bound(samples, [x]) > 0.2


def test_unsampled_piece_breaks_interpolation():
    # f = max(min(x, 1 - x), -1) on [-3, 3]; sampling only where x is active
    # leaves the term {x} alone, which overshoots f where 1 - x < x
    a, b = np.array([1.0, -1.0, 0.0]), np.array([0.0, 1.0, -1.0])
    target = LatticePwa(a[:, None], b, ((0, 1), (2,)))
    samples = [(np.array([x]), local_piece(target, np.array([x]))) for x in (0.1, 0.3, -2.5)]
    lat = build_lattice(samples)
    assert lat.n_literals == 2
    assert eval_lattice(lat, [0.8]) > eval_lattice(target, [0.8]) + 0.1
    full = build_lattice(samples + [(np.array([0.8]), local_piece(target, np.array([0.8])))])
    for x, pc in samples:
        assert abs(eval_lattice(full, x) - pc(x)[0]) <= 1e-9


def test_exact_when_every_piece_sampled():
    rng = np.random.default_rng(11)
    target = random_target(rng)
    X = rng.uniform(-2, 2, (4000, 2))
    samples = [(x, local_piece(target, x)) for x in X]
    lat = build_lattice(samples)
    V = rng.uniform(-2, 2, (500, 2))
    err = max(abs(eval_lattice(lat, x) - eval_lattice(target, x)) for x in V)
    assert err <= max(1e-9, estimate_error_bound(samples, V))


def test_empty_and_invalid():
    with pytest.raises(EmptySamples):
        build_lattice([])
    with pytest.raises(EmptySamples):
        LatticeBundle(())
    with pytest.raises(IndexError):
        LatticePwa([[1.0]], [0.0], ((0, 1),))


# Example 1 --------------------------------------------------------------

@pytest.fixture(scope="module")
def ex1_qp():
    return condense(example1_problem("zero"))


def test_example1_three_point_lattice(ex1_qp):
    pts = [np.array([-1.5, 0.5]), np.zeros(2), np.array([1.0, 0.5])]
    samples = collect_pieces(ex1_qp, pts)
    lat = build_lattice(samples)
    np.testing.assert_allclose(lat.a[1], [-5.72, -3.73], atol=0.005)
    assert lat.b.tolist() == [2.0, 0.0, -2.0]
    assert lat.a[0].tolist() == [0.0, 0.0] and lat.a[2].tolist() == [0.0, 0.0]
    assert [set(t) for t in lat.terms] == [{0, 1}, {0, 1}, {0, 2}]
    s = simplify(lat)
    assert s.n_terms == 2


def test_bundle_matches_channels(ex1_qp):
    pts = np.random.default_rng(0).uniform(-1, 1, (30, 2))
    samples = collect_pieces(ex1_qp, pts)
    b = build_bundle(samples, 1)
    for x in pts:
        assert eval_bundle(b, x)[0] == eval_lattice(b.channels[0], x)


# serialisation -----------------------------------------------------------

def multi_channel_bundle():
    rng = np.random.default_rng(2)
    return LatticeBundle(tuple(
        LatticePwa(rng.standard_normal((4, 3)), rng.standard_normal(4), ((0, 1), (2,), (1, 3)), k)
        for k in range(2)))


def test_round_trip_exact(tmp_path, ex1_qp):
    samples = collect_pieces(ex1_qp, [np.array([-1.5, 0.5]), np.zeros(2), np.array([1.0, 0.5])])
    for bundle in (build_bundle(samples, 1), multi_channel_bundle()):
        text = dumps(bundle)
        back = loads(text)
        assert back == bundle
        assert dumps(back) == text
        save(bundle, tmp_path / "b.json")
        assert load(tmp_path / "b.json") == bundle


def test_parse_errors():
    obj = json.loads(dumps(multi_channel_bundle()))
    bad = json.loads(json.dumps(obj))
    bad["channels"][1]["terms"][2][1] = 9
    with pytest.raises(ParseError, match=r"channel 1, term 2 \(row 2, col 1\)"):
        loads(json.dumps(bad))
    bad = json.loads(json.dumps(obj))
    bad["channels"][0]["literals"][0]["a"] = [1.0]
    with pytest.raises(ParseError, match="literal 0"):
        loads(json.dumps(bad))
    bad = json.loads(json.dumps(obj))
    bad["channels"] = []
    with pytest.raises(ParseError):
        loads(json.dumps(bad))
    bad = json.loads(json.dumps(obj))
    del bad["version"]
    with pytest.raises(ParseError, match="version"):
        loads(json.dumps(bad))
    bad = json.loads(json.dumps(obj))
    bad["version"] = 99
    with pytest.raises(VersionMismatch):
        loads(json.dumps(bad))
    with pytest.raises(ParseError, match="line"):
        loads("{not json")
