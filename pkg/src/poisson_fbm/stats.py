"""Statistical harness: covariance estimates, Gaussianity, Hurst index, bounds.

Everything here is a pure function of path matrices (replicas x grid times),
so reports can be regenerated from stored CSVs.
"""

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field as dc_field

import numpy as np
from scipy import stats as sps

from .errors import InvalidArgument
from .field import rng_for
from .kernels import fbm_covariance

STDERR_METHODS = ("gaussian", "moment", "bootstrap")


def as_path_matrix(paths):
    """Accept a 2-D array or a list of objects with a ``values`` attribute."""
    if isinstance(paths, np.ndarray):
        X = paths
    else:
        X = np.vstack([getattr(p, "values", p) for p in paths])
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise InvalidArgument("paths must form a (replicas, times) matrix")
    return X


@dataclass
class CovarianceEstimate:
    """Sample mean and covariance over a time grid, with entrywise standard errors.

    ``reliable`` is False when the standard errors cannot be trusted (fewer
    than three replicas, or a vanishing estimate wherever the data vary
    in no direction at all).
    """

    time_grid: np.ndarray
    mean: np.ndarray
    cov: np.ndarray
    stderr: np.ndarray
    replicas: int
    method: str = "gaussian"
    reliable: bool = True
    notes: list = dc_field(default_factory=list)


def empirical_covariance(paths, time_grid=None, method="gaussian", bootstrap=200, seed=0):
    """Unbiased sample covariance plus standard errors.

    Parameters
    ----------
    paths : array_like or list of PathSample
    time_grid : array_like, optional
        Defaults to the ``time_grid`` of the first PathSample, else
        ``linspace(0, 1, m)``.
    method : {"gaussian", "moment", "bootstrap"}
        ``gaussian``: ``se_ij^2 = (c_ii c_jj + c_ij^2) / (M - 1)``, exact for
        Gaussian data. ``moment``: ``se_ij^2 = (m4_ij - c_ij^2) / M`` with the
        empirical fourth cross moment. ``bootstrap``: standard deviation of
        the estimate over ``bootstrap`` resamples.
    """
    if method not in STDERR_METHODS:
        raise InvalidArgument(f"unknown stderr method {method!r}")
    X = as_path_matrix(paths)
    M, m = X.shape
    if time_grid is None:
        tg = getattr(paths[0], "time_grid", None) if not isinstance(paths, np.ndarray) else None
        time_grid = tg if tg is not None else np.linspace(0.0, 1.0, m)
    notes = []
    if M < 2:
        raise InvalidArgument("need at least two replicas for a covariance estimate")
    mean = X.mean(axis=0)
    Z = X - mean
    cov = Z.T @ Z / (M - 1)
    if method == "gaussian":
        d = np.diag(cov)
        se = np.sqrt((np.outer(d, d) + cov**2) / (M - 1))
    elif method == "moment":
        Z2 = Z * Z
        m4 = Z2.T @ Z2 / M
        se = np.sqrt(np.maximum(m4 - (Z.T @ Z / M) ** 2, 0.0) / M)
    else:
        rng = rng_for(seed, 99)
        acc = np.zeros((m, m))
        acc2 = np.zeros((m, m))
        for _ in range(int(bootstrap)):
            Xb = X[rng.integers(0, M, M)]
            cb = np.cov(Xb, rowvar=False, ddof=1).reshape(m, m)
            acc += cb
            acc2 += cb * cb
        B = int(bootstrap)
        se = np.sqrt(np.maximum(acc2 / B - (acc / B) ** 2, 0.0) * B / max(B - 1, 1))
    reliable = True
    if M < 3:
        reliable = False
        notes.append("fewer than three replicas")
    varying = np.diag(cov) > 0
    if not np.any(varying) and np.any(X != 0):
        reliable = False
        notes.append("replicas are identical: standard errors degenerate")
    return CovarianceEstimate(np.asarray(time_grid, dtype=float), mean, cov, se, M, method, reliable, notes)


def covariance_deviation(est, H):
    """``(sup |cov - R_H|, sup |cov - R_H| / stderr)`` over the grid.

    Entries whose standard error is zero are skipped in the normalized sup
    unless the deviation there is nonzero, which yields ``inf``.
    """
    t = np.asarray(est.time_grid, dtype=float)
    target = fbm_covariance(t[:, None], t[None, :], H)
    dev = np.abs(est.cov - target)
    sup = float(dev.max()) if dev.size else 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(est.stderr > 0, dev / est.stderr, np.where(dev > 0, np.inf, 0.0))
    return sup, float(z.max()) if z.size else 0.0


def within_stderr_fraction(est, H, k=3.0):
    """Share of covariance entries (``t = 0`` rows excluded) within ``k`` stderr of ``R_H``."""
    t = np.asarray(est.time_grid, dtype=float)
    keep = t > 0
    target = fbm_covariance(t[keep][:, None], t[keep][None, :], H)
    dev = np.abs(est.cov[np.ix_(keep, keep)] - target)
    se = est.stderr[np.ix_(keep, keep)]
    return float(np.mean(dev <= k * se))


def gaussianity_test(samples, mean, variance):
    """One-sample Kolmogorov-Smirnov p-value against ``N(mean, variance)``."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 100:
        raise InvalidArgument(f"KS test needs at least 100 samples, got {x.size}")
    if not (variance > 0 and math.isfinite(variance)):
        raise InvalidArgument("target variance must be positive")
    return float(sps.kstest(x, "norm", args=(float(mean), math.sqrt(variance))).pvalue)


@dataclass
class HurstEstimate:
    H: float
    lags: np.ndarray
    variances: np.ndarray
    out_of_model: bool


def hurst_estimate(paths, time_grid=None, min_replicas=1000):
    """Hurst index from ``log Var[X(t+delta) - X(t)] = 2H log delta + c``.

    Uses dyadic lags ``delta = 2^k * dt`` on an equispaced grid, pooling the
    increments over all start times; each increment is centered over
    replicas. Estimates outside ``(0, 1)`` (or within 1e-2 of the boundary)
    are flagged ``out_of_model``.
    """
    X = as_path_matrix(paths)
    M, m = X.shape
    if M < min_replicas:
        raise InvalidArgument(f"Hurst estimate needs at least {min_replicas} replicas, got {M}")
    if time_grid is None:
        time_grid = np.linspace(0.0, 1.0, m)
    t = np.asarray(time_grid, dtype=float)
    dt = np.diff(t)
    if dt.size == 0 or not np.allclose(dt, dt[0], rtol=1e-9, atol=0):
        raise InvalidArgument("Hurst estimate needs an equispaced grid")
    lags, variances = [], []
    k = 1
    while k < m:
        inc = X[:, k:] - X[:, :-k]
        v = float(np.mean(np.var(inc, axis=0, ddof=1)))
        if v > 0 and math.isfinite(v):
            lags.append(k * dt[0])
            variances.append(v)
        k *= 2
    if len(lags) < 3:
        raise InvalidArgument("fewer than 3 usable dyadic lags")
    lags, variances = np.array(lags), np.array(variances)
    slope = np.polyfit(np.log(lags), np.log(variances), 1)[0]
    H = 0.5 * float(slope)
    return HurstEstimate(H, lags, variances, out_of_model=not (0.01 < H < 0.99))


@dataclass
class BoundReport:
    times: np.ndarray
    variance: np.ndarray
    stderr: np.ndarray
    bound: np.ndarray
    margin: np.ndarray  # bound - (variance - 3 stderr)
    min_margin: float
    violations: list
    ok: bool


def bound_check(paths, params, constants, time_grid=None, slack=3.0, scale=1.0):
    """Check ``Var[Y(t)] - slack * se <= scale * K * t^2H`` at every grid time.

    Violations are reported, never raised. ``se`` is the moment-based
    standard error of the sample variance.
    """
    X = as_path_matrix(paths)
    M, m = X.shape
    t = np.linspace(0.0, 1.0, m) if time_grid is None else np.asarray(time_grid, dtype=float)
    var = X.var(axis=0, ddof=1)
    Z2 = (X - X.mean(axis=0)) ** 2
    se = np.sqrt(np.maximum(np.mean(Z2**2, axis=0) - np.mean(Z2, axis=0) ** 2, 0.0) / M)
    bound = scale * constants.K * t ** (2 * params.H)
    margin = bound - (var - slack * se)
    viol = [float(tt) for tt, mm in zip(t, margin) if mm < 0]
    # the t = 0 row is 0 <= 0 by construction; it only decides the minimum
    # when it is the sole row
    inner = margin[t > 0] if np.any(t > 0) else margin
    return BoundReport(t, var, se, bound, margin, float(inner.min()), viol, not viol)


# -- convergence report -------------------------------------------------------------

REPORT_COLUMNS = ("n", "sup_norm", "normalized_sup", "mean_abs_z", "ks_pvalue", "hurst", "bound_margin")


@dataclass
class ConvergenceReport:
    H: float
    s: float
    replicas: int
    rows: list = dc_field(default_factory=list)
    variance_profiles: dict = dc_field(default_factory=dict)  # n -> (t, var, bound)

    def add(self, **row):
        self.rows.append({k: row.get(k) for k in REPORT_COLUMNS})

    def to_json(self):
        prof = {str(k): {"t": list(map(float, t)), "variance": list(map(float, v)), "bound": list(map(float, b))}
                for k, (t, v, b) in self.variance_profiles.items()}
        return json.dumps({"H": self.H, "s": self.s, "replicas": self.replicas, "rows": self.rows,
                           "variance_profiles": prof}, indent=2, sort_keys=True)

    def to_text(self):
        head = [c for c in REPORT_COLUMNS]
        body = [[_fmt(r[c]) for c in head] for r in self.rows]
        widths = [max(len(h), *(len(b[i]) for b in body)) if body else len(h) for i, h in enumerate(head)]
        lines = ["  ".join(h.rjust(w) for h, w in zip(head, widths))]
        lines += ["  ".join(v.rjust(w) for v, w in zip(b, widths)) for b in body]
        return "\n".join(lines) + "\n"

    def to_csv(self):
        """Plot-ready CSV text: ``n`` versus the deviation columns."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in self.rows:
            w.writerow([_fmt(r[c]) for c in REPORT_COLUMNS])
        return buf.getvalue()

    def variance_csv(self):
        """Plot-ready CSV text: ``n, t, variance, bound``."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "t", "variance", "bound"])
        for n, (t, v, b) in sorted(self.variance_profiles.items()):
            for row in zip(t, v, b):
                w.writerow([repr(float(n)), *(repr(float(x)) for x in row)])
        return buf.getvalue()


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def trend_nonincreasing(values, allowed_inversions=1):
    """True if ``values`` decrease except for at most ``allowed_inversions`` upticks."""
    ups = sum(1 for a, b in zip(values, values[1:]) if b > a)
    return ups <= allowed_inversions
