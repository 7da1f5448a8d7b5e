import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from poisson_fbm.sweep import brute_force_panel_integrals, power_antiderivative, separable_panel_integrals

A = [power_antiderivative(0.2), power_antiderivative(-0.8)]
B = [power_antiderivative(0.5), power_antiderivative(1.5)]


@settings(max_examples=40)
@given(st.integers(0, 12), st.integers(0, 2**32 - 1))
def test_sweep_matches_cell_decomposition(npts, seed):
    rng = np.random.default_rng(seed)
    px, pd = rng.uniform(0, 2, npts), rng.uniform(0, 2, npts)
    X = np.sort(np.concatenate([[0.0, 2.0], rng.uniform(0, 2, 3)]))
    D = np.sort(np.concatenate([[0.0, 2.0], rng.uniform(0, 2, 3)]))
    fast = separable_panel_integrals(px, pd, X, D, A, B)
    slow = brute_force_panel_integrals(px, pd, X, D, A, B)
    np.testing.assert_allclose(fast, slow, atol=1e-12)


def test_empty_field_gives_plain_integrals():
    X = np.array([0.0, 0.5, 1.0])
    D = np.array([0.0, 1.0])
    out = separable_panel_integrals([], [], X, D, A[:1], B[:1])
    expected = np.diff(A[0](X)) * (B[0](1.0) - B[0](0.0))
    np.testing.assert_allclose(out[0, 0, :, 0], expected)


def test_single_point_flips_upper_right_quadrant():
    X = np.array([0.0, 1.0, 2.0])
    D = np.array([0.0, 1.0, 2.0])
    one = [lambda x: np.asarray(x, float)]
    out = separable_panel_integrals([1.0], [1.0], X, D, one, one)[0, 0]
    np.testing.assert_allclose(out, [[1, 1], [1, -1]])


def test_points_below_last_row_are_ignored():
    X = np.array([0.0, 1.0])
    D = np.array([0.0, 1.0])
    one = [lambda x: np.asarray(x, float)]
    out = separable_panel_integrals([0.5], [5.0], X, D, one, one)
    assert out[0, 0, 0, 0] == pytest.approx(1.0)


def test_column_edges_must_start_at_zero():
    with pytest.raises(ValueError):
        separable_panel_integrals([], [], [0.1, 1.0], [0.0, 1.0], A, B)
