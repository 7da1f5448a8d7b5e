"""Deterministic kernels of the Poisson-parity fBm construction.

Conventions
-----------
``h(t, x, y)`` is the length of the part of ``[0, t]`` during which a session
of duration ``x`` finishing at time ``-y`` is active. The shifted kernel is
``g_s(t, x, y) = h(t, x, y + s)`` and the integrand weight is
``phi_t(x, y) = g_s(t, x, y) / x**(2 - H)``.

Normalization: with ``c_H = H(2H-1)(1-H)(3-2H)``,

    2 c_H * integral(phi_t1 * phi_t2 dx dy over x > 0, y < 0) = cov_H(t1, t2),

the fBm covariance. Every generator in the package carries the factor
``sqrt(2 c_H)``.

All functions broadcast over numpy arrays.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import InvalidArgument, ToleranceNotMet
from .quadrature import QuadratureConfig, panel_rule, power_graded_rule

__all__ = [
    "KernelParams",
    "KernelVariant",
    "h_kernel",
    "h_kernel_minmax",
    "g_kernel",
    "phi_kernel",
    "phi_kernel_table",
    "fbm_covariance",
    "kernel_inner_product",
]


@dataclass(frozen=True)
class KernelParams:
    """Hurst index ``H`` in (1/2, 1) and kernel shift ``s`` > 0."""

    H: float
    s: float = 1.0

    def __post_init__(self):
        if not (0.5 < self.H < 1.0):
            raise InvalidArgument(f"Hurst index must lie in (1/2, 1), got H={self.H}")
        if not (self.s > 0 and np.isfinite(self.s)):
            raise InvalidArgument(f"kernel shift must be positive, got s={self.s}")

    @property
    def c_H(self):
        H = self.H
        return H * (2 * H - 1) * (1 - H) * (3 - 2 * H)


class KernelVariant(str, Enum):
    """``standard`` integrates over y <= 0; ``reflected`` uses ``h(t, x, -y)``
    over y >= 0. Both are functions of the depth ``|y|`` alone."""

    STANDARD = "standard"
    REFLECTED = "reflected"

    def to_standard_y(self, y):
        """Map a spatial y of this variant to the standard (y <= 0) coordinate."""
        y = np.asarray(y, dtype=float)
        return -y if self is KernelVariant.REFLECTED else y


def _check_nonneg(name, v):
    if np.any(np.asarray(v) < 0):
        raise InvalidArgument(f"{name} must be non-negative")


def h_kernel(t, x, y):
    """Session-activity kernel by its five-branch table.

    Branch conditions follow the half-open inequalities of the table
    literally, so boundary points are deterministic.
    """
    _check_nonneg("t", t)
    _check_nonneg("x", x)
    t, x, y = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (t, x, y)))
    lower = y < -t
    upper = (-t <= y) & (y < 0)
    conds = [
        (-y < x) & lower,
        (-t - y < x) & (x <= -y) & lower,
        (-y < x) & upper,
        (0 < x) & (x <= -y) & upper,
    ]
    out = np.select(conds, [t, x + t + y, -y, x], default=0.0)
    return out[()] if out.ndim == 0 else out


def h_kernel_minmax(t, x, y):
    """Same kernel through ``((t+y)^0 + x)_+ - (y^0 + x)_+``."""
    _check_nonneg("t", t)
    _check_nonneg("x", x)
    t, x, y = (np.asarray(v, dtype=float) for v in (t, x, y))
    out = np.maximum(np.minimum(t + y, 0.0) + x, 0.0) - np.maximum(np.minimum(y, 0.0) + x, 0.0)
    return out[()] if np.ndim(out) == 0 else out


def g_kernel(t, x, y, params):
    return h_kernel(t, x, np.asarray(y, dtype=float) + params.s)


def phi_kernel(t, x, y, params, variant=KernelVariant.STANDARD):
    """``g_s(t, x, y) / x**(2-H)`` by composition."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise InvalidArgument("phi is singular at x <= 0")
    y = KernelVariant(variant).to_standard_y(y)
    return g_kernel(t, x, y, params) / x ** (2.0 - params.H)


def phi_kernel_table(t, x, y, params, variant=KernelVariant.STANDARD):
    """``phi_t`` from its own piecewise closed form (independent code path)."""
    _check_nonneg("t", t)
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise InvalidArgument("phi is singular at x <= 0")
    y = KernelVariant(variant).to_standard_y(y)
    H, s = params.H, params.s
    t, x, y = np.broadcast_arrays(np.asarray(t, dtype=float), x, y)
    lower = y < -t - s
    upper = (-t - s <= y) & (y < -s)
    conds = [
        (-y - s < x) & lower,
        (-t - s - y < x) & (x <= -y - s) & lower,
        (-y - s < x) & upper,
        (0 < x) & (x <= -y - s) & upper,
    ]
    xa = x ** (H - 2.0)
    vals = [t * xa, (x + t + s + y) * xa, -(y + s) * xa, x ** (H - 1.0)]
    out = np.select(conds, vals, default=0.0)
    return out[()] if out.ndim == 0 else out


def fbm_covariance(t1, t2, H):
    """``(t1^2H + t2^2H - |t1 - t2|^2H) / 2``."""
    _check_nonneg("t1", t1)
    _check_nonneg("t2", t2)
    if not (0.0 < H < 1.0):
        raise InvalidArgument(f"H must lie in (0, 1), got {H}")
    t1 = np.asarray(t1, dtype=float)
    t2 = np.asarray(t2, dtype=float)
    out = 0.5 * (t1 ** (2 * H) + t2 ** (2 * H) - np.abs(t1 - t2) ** (2 * H))
    return out[()] if out.ndim == 0 else out


# -- inner products ---------------------------------------------------------


def _h_product_in_z(t1, t2, x, z_lo):
    """``int_{z_lo}^0 h(t1,x,z) h(t2,x,z) dz`` for each x, exactly.

    The integrand is piecewise quadratic in z between the kinks, so a
    two-point Gauss rule per piece is exact.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if z_lo is None:
        z_lo = -max(t1, t2) - x
    z_lo = np.broadcast_to(np.asarray(z_lo, dtype=float), x.shape)
    kinks = np.stack(
        [
            -t1 - x,
            -t2 - x,
            -x,
            np.full_like(x, -t1),
            np.full_like(x, -t2),
            z_lo,
            np.zeros_like(x),
        ],
        axis=1,
    )
    kinks = np.sort(np.maximum(kinks, z_lo[:, None]), axis=1)
    a, b = kinks[:, :-1], kinks[:, 1:]
    g = 0.5 / np.sqrt(3.0)
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    total = np.zeros(x.shape)
    xx = x[:, None]
    for z in (mid - g * 2 * half, mid + g * 2 * half):
        total += (half * h_kernel(t1, xx, z) * h_kernel(t2, xx, z)).sum(axis=1)
    return total


def _x_integral(t1, t2, H, x_hi, z_lo, order):
    """``int_0^x_hi x^(2H-4) J(x) dx`` (plus the exact tail when x_hi is inf)."""
    T = max(t1, t2)
    cand = [t1, t2, abs(t1 - t2)]
    if z_lo is not None:
        cand += [-z_lo - t1, -z_lo - t2, -z_lo]
    top = T if not np.isfinite(x_hi) else x_hi
    bps = sorted({c for c in cand if 0 < c < top} | {top})
    # x^(2H-4) varies by orders of magnitude on long panels: grade them
    edges = [bps[0]]
    for b in bps[1:]:
        a = edges[-1]
        k = int(np.ceil(np.log2(b / a)))
        edges.extend(a * (b / a) ** (np.arange(1, k + 1) / k) if k > 1 else [b])
    bps = edges
    # first panel graded to absorb the x^(2H-2) endpoint behaviour
    x0, w0 = power_graded_rule(bps[0], order, 1.0 / (2 * H - 1))
    x1, w1 = panel_rule(bps, order)
    xs = np.concatenate([x0, x1])
    ws = np.concatenate([w0, w1])
    total = float(np.sum(ws * xs ** (2 * H - 4) * _h_product_in_z(t1, t2, xs, z_lo)))
    if not np.isfinite(x_hi):
        # J(x) = t1 t2 x + beta for x >= max(t1, t2)
        beta = float(_h_product_in_z(t1, t2, np.array([T]), z_lo)[0]) - t1 * t2 * T
        total += t1 * t2 * T ** (2 * H - 2) / (2 - 2 * H) + beta * T ** (2 * H - 3) / (3 - 2 * H)
    return total


def kernel_inner_product(t1, t2, params, quad=None, extent=None):
    """``2 c_H * integral(phi_t1 phi_t2)`` over the kernel support.

    Parameters
    ----------
    t1, t2 : float
        Times in [0, 1] (larger values are accepted).
    params : KernelParams
    quad : QuadratureConfig, optional
        ``gauss_order`` and ``rel_tol`` are used; the order is doubled once
        to certify the result.
    extent : float, optional
        Restrict the integral to ``[0, extent] x [-extent, 0]`` (the
        rectangle a finite-n generator integrates over). Default: the whole
        quadrant, with the x-tail integrated in closed form.

    Raises
    ------
    ToleranceNotMet
        If the two orders disagree by more than ``rel_tol``.
    """
    quad = quad or QuadratureConfig()
    _check_nonneg("t1", t1)
    _check_nonneg("t2", t2)
    t1, t2 = float(t1), float(t2)
    if t1 == 0.0 or t2 == 0.0:
        return 0.0
    H, s = params.H, params.s
    # substitute z = y + s; h vanishes for z >= 0 so the shift drops out
    # unless the y-range is truncated
    if extent is None:
        x_hi, z_lo = np.inf, None
    else:
        x_hi, z_lo = float(extent), s - float(extent)
        if z_lo >= 0:
            return 0.0
    coarse = _x_integral(t1, t2, H, x_hi, z_lo, quad.gauss_order)
    fine = _x_integral(t1, t2, H, x_hi, z_lo, 2 * quad.gauss_order)
    err = abs(fine - coarse)
    val = 2.0 * params.c_H * fine
    if err > quad.rel_tol * abs(fine) + 1e-300:
        raise ToleranceNotMet(
            f"kernel inner product did not converge (t1={t1}, t2={t2})",
            estimate=val,
            error=2.0 * params.c_H * err,
        )
    return val
