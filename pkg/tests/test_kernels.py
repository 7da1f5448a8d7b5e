import numpy as np
import pytest
from hypothesis import given, strategies as st

from poisson_fbm.errors import InvalidArgument, ToleranceNotMet
from poisson_fbm.kernels import (
    KernelParams,
    KernelVariant,
    fbm_covariance,
    g_kernel,
    h_kernel,
    h_kernel_minmax,
    kernel_inner_product,
    phi_kernel,
    phi_kernel_table,
)
from poisson_fbm.quadrature import QuadratureConfig
from poisson_fbm.suites import h_by_indicator_integral

times = st.floats(0.0, 2.0, allow_nan=False)
lengths = st.floats(0.0, 3.0, allow_nan=False)
ends = st.floats(-4.0, 1.0, allow_nan=False)


def test_params_validation():
    with pytest.raises(InvalidArgument, match=r"\(1/2, 1\)"):
        KernelParams(0.5)
    with pytest.raises(InvalidArgument):
        KernelParams(1.0)
    with pytest.raises(InvalidArgument):
        KernelParams(0.7, s=0.0)
    assert KernelParams(0.75).c_H == pytest.approx(0.75 * 0.5 * 0.25 * 1.5)


@pytest.mark.parametrize(
    "t,x,y,expected",
    [
        (1.0, 3.0, -2.0, 1.0),  # session covers [0, t]
        (1.0, 1.5, -2.0, 0.5),  # starts inside
        (1.0, 2.0, -0.5, 0.5),  # ends inside, started before 0
        (1.0, 0.25, -0.5, 0.25),  # entirely inside
        (1.0, 1.0, 0.5, 0.0),  # ends after... y > 0 means before time 0
        (1.0, 0.5, -3.0, 0.0),  # ended before... starts after t
    ],
)
def test_h_examples(t, x, y, expected):
    assert h_kernel(t, x, y) == pytest.approx(expected)


@given(times, lengths, ends)
def test_h_table_matches_minmax_and_definition(t, x, y):
    a = h_kernel(t, x, y)
    assert a == pytest.approx(h_kernel_minmax(t, x, y), abs=1e-12)
    assert a == pytest.approx(h_by_indicator_integral(t, x, y), abs=1e-10)
    assert 0.0 <= a <= min(t, x) + 1e-12


def test_h_rejects_negative_arguments():
    with pytest.raises(InvalidArgument):
        h_kernel(-0.1, 1.0, -1.0)
    with pytest.raises(InvalidArgument):
        h_kernel(0.1, -1.0, -1.0)


@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.floats(0.01, 3.0), st.floats(-5.0, 0.0))
def test_increment_shift_identity(t1, t2, x, y):
    # g_s(t) - g_s(t') = g_{t'+s}(t - t') for t >= t'
    t, tp = max(t1, t2), min(t1, t2)
    s = 1.0
    lhs = g_kernel(t, x, y, KernelParams(0.7, s)) - g_kernel(tp, x, y, KernelParams(0.7, s))
    rhs = g_kernel(t - tp, x, y, KernelParams(0.7, tp + s)) if t > tp else 0.0
    assert lhs == pytest.approx(rhs, abs=1e-12)


@given(st.floats(0.0, 1.0), st.floats(1e-3, 4.0), st.floats(-6.0, 0.0), st.sampled_from([0.55, 0.7, 0.9]),
       st.sampled_from([0.5, 1.0, 2.0]))
def test_phi_composition_matches_table(t, x, y, H, s):
    p = KernelParams(H, s)
    assert phi_kernel(t, x, y, p) == pytest.approx(phi_kernel_table(t, x, y, p), rel=1e-12, abs=1e-14)


def test_phi_reflected_variant_is_mirror():
    p = KernelParams(0.7)
    x, y = np.array([0.3, 1.2, 2.0]), np.array([-1.5, -2.1, -0.2])
    np.testing.assert_array_equal(
        phi_kernel(0.8, x, y, p), phi_kernel(0.8, x, -y, p, variant=KernelVariant.REFLECTED)
    )


def test_phi_singular_at_origin():
    with pytest.raises(InvalidArgument):
        phi_kernel(0.5, 0.0, -1.0, KernelParams(0.7))


def test_fbm_covariance_frozen_value():
    # 0.5 * (0.25^1.4 + 0.75^1.4 - 0.5^1.4)
    assert fbm_covariance(0.25, 0.75, 0.7) == pytest.approx(0.21656703724214052, rel=1e-14)
    assert fbm_covariance(0.0, 0.6, 0.7) == 0.0
    assert fbm_covariance(0.6, 0.6, 0.7) == pytest.approx(0.6**1.4)


@pytest.mark.parametrize("H", [0.55, 0.7, 0.9])
@pytest.mark.parametrize("s", [0.5, 2.0])
def test_inner_product_reproduces_covariance(H, s):
    p = KernelParams(H, s)
    assert kernel_inner_product(0.5, 1.0, p) == pytest.approx(fbm_covariance(0.5, 1.0, H), abs=1e-8)
    assert kernel_inner_product(0.3, 0.3, p) == pytest.approx(0.3 ** (2 * H), rel=1e-8)


def test_inner_product_zero_time():
    assert kernel_inner_product(0.0, 0.7, KernelParams(0.7)) == 0.0


def test_truncated_inner_product_is_smaller_and_converges():
    p = KernelParams(0.7)
    full = kernel_inner_product(1.0, 1.0, p)
    vals = [kernel_inner_product(1.0, 1.0, p, extent=n) for n in (2.0, 4.0, 16.0, 1e4)]
    assert all(a < b for a, b in zip(vals, vals[1:]))
    assert vals[-1] < full and vals[-1] == pytest.approx(full, rel=5e-3)
    # frozen: limit variance of the n = 16 rectangle at t = 1
    assert vals[2] == pytest.approx(0.91559, abs=2e-5)


def test_inner_product_reports_nonconvergence():
    with pytest.raises(ToleranceNotMet) as info:
        kernel_inner_product(1.0, 1.0, KernelParams(0.7), QuadratureConfig(gauss_order=1, rel_tol=1e-14))
    assert info.value.estimate is not None and info.value.error > 0
