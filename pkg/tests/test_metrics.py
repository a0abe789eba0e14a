import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridpmb.intensity import ConeDetection, ConstantDetection
from hybridpmb.metrics import OspaParams, coverage_filtered_truth, mospa_curve, optimal_assignment, ospa


def test_ospa_hand_cases():
    assert ospa(np.zeros((0, 4)), np.zeros((0, 4))) == 0.0
    assert ospa(np.zeros((0, 4)), np.ones((3, 4))) == 10.0
    assert ospa([[0, 0, 0, 0]], [[3, 0, 4, 0]]) == pytest.approx(5.0, abs=1e-15)


def test_ospa_cardinality_penalty():
    # one matched exactly, one unmatched: sqrt((0 + 100) / 2)
    assert ospa([[0, 0, 0, 0]], [[0, 0, 0, 0], [50, 0, 0, 0]]) == pytest.approx(np.sqrt(50))


def test_ospa_params_validation():
    with pytest.raises(ValueError):
        OspaParams(p=0.5)
    with pytest.raises(ValueError):
        OspaParams(c=0)


def test_assignment_diagonal_and_scalar():
    cost = np.full((4, 4), 10.0) - 9 * np.eye(4)
    rows, cols, total = optimal_assignment(cost)
    np.testing.assert_array_equal(rows, cols)
    assert total == 4.0
    r, c, t = optimal_assignment([[3.5]])
    assert (r[0], c[0], t) == (0, 0, 3.5)


def test_assignment_matches_brute_force():
    rng = np.random.default_rng(42)
    for _ in range(100):
        cost = rng.random((5, 5))
        _, _, total = optimal_assignment(cost)
        brute = min(sum(cost[i, p[i]] for i in range(5)) for p in itertools.permutations(range(5)))
        assert total == pytest.approx(brute, abs=1e-12)


def test_assignment_rectangular():
    rng = np.random.default_rng(7)
    cost = rng.random((3, 5))
    _, cols, total = optimal_assignment(cost)
    brute = min(sum(cost[i, p[i]] for i in range(3)) for p in itertools.permutations(range(5), 3))
    assert total == pytest.approx(brute)
    assert len(set(cols)) == 3


sets = st.integers(0, 4).flatmap(
    lambda n: st.lists(st.lists(st.floats(-20, 20), min_size=4, max_size=4), min_size=n, max_size=n)
)


def _arr(x):
    return np.asarray(x, dtype=float).reshape(-1, 4)


@settings(max_examples=100, deadline=None)
@given(sets, sets)
def test_ospa_symmetric_bounded(a, b):
    d1, d2 = ospa(_arr(a), _arr(b)), ospa(_arr(b), _arr(a))
    assert d1 == pytest.approx(d2, abs=1e-12)
    assert 0.0 <= d1 <= 10.0


@settings(max_examples=100, deadline=None)
@given(sets)
def test_ospa_identity(a):
    A = _arr(a)
    assert ospa(A, A) == pytest.approx(0.0, abs=1e-12)
    assert ospa(A, A[::-1]) == pytest.approx(0.0, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(sets, sets)
def test_ospa_permutation_invariant(a, b):
    A, B = _arr(a), _arr(b)
    assert ospa(A[::-1], B) == pytest.approx(ospa(A, B), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(sets, sets)
def test_ospa_positive_when_different(a, b):
    A, B = _arr(a), _arr(b)
    if len(A) != len(B):
        assert ospa(A, B) > 0


@settings(max_examples=200, deadline=None)
@given(sets, sets, sets)
def test_ospa_triangle(a, b, c):
    A, B, C = _arr(a), _arr(b), _arr(c)
    assert ospa(A, C) <= ospa(A, B) + ospa(B, C) + 1e-9


def test_mospa_curve():
    m, se = mospa_curve([[1.0, 2.0, 3.0]])
    np.testing.assert_array_equal(m, [1, 2, 3])
    m, _ = mospa_curve(np.full((5, 3), 4.0))
    np.testing.assert_array_equal(m, 4.0)
    m, se = mospa_curve([[0.0], [10.0]])
    assert m[0] == 5.0 and se[0] == pytest.approx(5.0)
    with pytest.raises(ValueError):
        mospa_curve(np.zeros((0, 3)))


def test_coverage_filter():
    truth = np.array([[10, 0, 0, 0], [-10, 0, 0, 0], [10, 0, 10, 0]], dtype=float)
    assert len(coverage_filtered_truth(truth, ConstantDetection(0.3))) == 3
    kept = coverage_filtered_truth(truth, ConeDetection((0, 0), (1, 0)))
    np.testing.assert_array_equal(kept, truth[[0, 2]])
