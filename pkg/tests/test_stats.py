import numpy as np
import pytest

from poisson_fbm.errors import InvalidArgument
from poisson_fbm.field import rng_for
from poisson_fbm.kernels import KernelParams, fbm_covariance
from poisson_fbm.oracles import OracleConfig, fbm_exact_paths
from poisson_fbm.pathgen import bound_constants
from poisson_fbm.stats import (
    ConvergenceReport,
    CovarianceEstimate,
    bound_check,
    covariance_deviation,
    empirical_covariance,
    gaussianity_test,
    hurst_estimate,
    trend_nonincreasing,
    within_stderr_fraction,
)

GRID = np.linspace(0, 1, 33)


@pytest.fixture(scope="module")
def fbm_paths():
    return fbm_exact_paths(OracleConfig(H=0.7, time_grid=GRID, replicas=5000, seed=10))


def test_all_zero_paths():
    est = empirical_covariance(np.zeros((10, 4)))
    assert np.all(est.mean == 0) and np.all(est.cov == 0)


def test_identical_replicas_flagged():
    X = np.tile(np.linspace(0, 1, 5), (2, 1))
    est = empirical_covariance(X)
    assert not est.reliable and np.all(est.cov == 0)
    with pytest.raises(InvalidArgument):
        empirical_covariance(X[:1])


@pytest.mark.parametrize("method", ["gaussian", "moment", "bootstrap"])
def test_stderr_methods_agree_on_gaussian_data(fbm_paths, method):
    X = fbm_paths[:2000, ::4]
    ref = empirical_covariance(X, GRID[::4]).stderr
    se = empirical_covariance(X, GRID[::4], method=method, bootstrap=100).stderr
    np.testing.assert_allclose(se[1:, 1:], ref[1:, 1:], rtol=0.35)


def test_oracle_calibration(fbm_paths):
    est = empirical_covariance(fbm_paths, GRID)
    assert within_stderr_fraction(est, 0.7) >= 0.99
    sup, zsup = covariance_deviation(est, 0.7)
    assert sup < 0.05 and zsup < 4.5


def test_deviation_zero_for_exact_covariance():
    t = GRID[:5]
    cov = fbm_covariance(t[:, None], t[None, :], 0.7)
    est = CovarianceEstimate(t, np.zeros(5), cov, np.full((5, 5), 0.1), 100)
    assert covariance_deviation(est, 0.7) == (0.0, 0.0)


def test_gaussianity():
    x = rng_for(1).standard_normal(2000)
    assert gaussianity_test(x, 0.0, 1.0) > 1e-3
    assert gaussianity_test(np.full(200, 0.3), 0.0, 1.0) < 1e-10
    with pytest.raises(InvalidArgument):
        gaussianity_test(x[:50], 0.0, 1.0)
    with pytest.raises(InvalidArgument):
        gaussianity_test(x, 0.0, 0.0)


def test_ks_calibration():
    # p-values of correct nulls are uniform: about 1% fall below 0.01
    ps = np.array([gaussianity_test(rng_for(7, k).standard_normal(200), 0, 1) for k in range(600)])
    assert np.mean(ps < 0.01) < 0.04
    assert 0.4 < np.mean(ps < 0.5) < 0.6


def test_hurst_on_oracles(fbm_paths):
    assert 0.6 <= hurst_estimate(fbm_paths, GRID).H <= 0.8
    bm = fbm_exact_paths(OracleConfig(H=0.5, time_grid=GRID, replicas=2000, seed=3))
    assert 0.4 <= hurst_estimate(bm, GRID).H <= 0.6


def test_hurst_linear_paths_out_of_model():
    slopes = rng_for(2).standard_normal(1000)
    X = slopes[:, None] * GRID[None, :]
    est = hurst_estimate(X, GRID)
    assert est.H == pytest.approx(1.0, abs=1e-6) and est.out_of_model


def test_hurst_needs_lags_and_replicas():
    with pytest.raises(InvalidArgument):
        hurst_estimate(rng_for(0).standard_normal((1000, 4)))
    with pytest.raises(InvalidArgument):
        hurst_estimate(rng_for(0).standard_normal((10, 33)))


def test_bound_check(fbm_paths):
    params = KernelParams(0.7, 1.0)
    consts = bound_constants(params)
    rep = bound_check(fbm_paths, params, consts, GRID)
    assert rep.ok and rep.margin[0] == 0.0 and rep.min_margin > 0
    inflated = fbm_paths * np.sqrt(10 * consts.K)
    bad = bound_check(inflated, params, consts, GRID)
    assert not bad.ok and bad.violations and bad.min_margin < 0


def test_report_outputs():
    rep = ConvergenceReport(H=0.7, s=1.0, replicas=10)
    rep.add(n=2.0, sup_norm=0.5, normalized_sup=3.0, mean_abs_z=1.0, ks_pvalue=None, hurst=0.7, bound_margin=1.0)
    rep.variance_profiles[2.0] = (GRID[:2], np.array([0.0, 0.1]), np.array([0.0, 5.0]))
    assert '"sup_norm": 0.5' in rep.to_json()
    assert rep.to_text().splitlines()[0].split()[0] == "n"
    assert rep.to_csv().splitlines()[1].startswith("2.0,0.5")
    assert rep.variance_csv().splitlines()[-1] == "2.0,0.03125,0.1,5.0"


def test_trend():
    assert trend_nonincreasing([4, 3, 2, 1])
    assert trend_nonincreasing([4, 3, 3.5, 1])
    assert not trend_nonincreasing([1, 2, 3, 4])
