"""The Poisson-parity approximation ``Y_n`` and its diagnostics.

``Y_n(t) = n sqrt(2 c_H) * integral over [0, n] x [-n, 0] of
phi_t(x, y) sqrt(x |y|) (-1)^N_n(x, y) dx dy``.

Integration scheme
------------------
In depth coordinates ``d = |y|`` every branch of ``phi_t(x, -d) sqrt(x d)`` is
a combination of three separable channels::

    c0 = x^(H-1/2) d^(1/2),  c1 = x^(H-3/2) d^(1/2),  c2 = x^(H-3/2) d^(3/2)

(branch 1: ``t c1``; branch 2: ``c0 + (t+s) c1 - c2``; branch 3:
``c2 - s c1``; branch 4: ``c0``). :mod:`poisson_fbm.sweep` integrates each
channel against the parity field exactly on every panel of a tensor grid, so
the only discretization error comes from the two diagonal kinks
``x = d - s`` and ``x = d - s - t``: a panel cut by one of them uses the
area-weighted mix of the branches that meet inside it. Row edges include
``d = s`` and ``d = s + t_i`` for every grid time, so horizontal kinks are
exact.
"""

import hashlib
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field as dc_field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize_scalar
from scipy.special import expi

from .errors import CapacityError, InvalidArgument, InvalidGrid, ToleranceNotMet
from .field import FieldConfig, Orientation, parity_grid, pair_correlation_exact, rng_for, sample_field
from .kernels import KernelParams, KernelVariant, kernel_inner_product, phi_kernel_table
from .quadrature import QuadratureConfig, gauss_unit, panel_rule, power_graded_rule
from .sweep import power_antiderivative, separable_panel_integrals

WORKERS_ENV = "POISSON_FBM_WORKERS"
DEFAULT_GRID_SIZE = 64


def default_time_grid(m=DEFAULT_GRID_SIZE):
    return np.linspace(0.0, 1.0, m)


@dataclass(frozen=True)
class ApproxConfig:
    n: float
    time_grid: tuple = dc_field(default_factory=lambda: tuple(default_time_grid()))
    kernel: KernelParams = dc_field(default_factory=lambda: KernelParams(0.7, 1.0))
    variant: KernelVariant = KernelVariant.STANDARD
    quad: QuadratureConfig = dc_field(default_factory=QuadratureConfig)
    replicas: int = 1
    seed: int = 0

    def __post_init__(self):
        grid = tuple(float(t) for t in np.atleast_1d(np.asarray(self.time_grid, dtype=float)))
        object.__setattr__(self, "time_grid", grid)
        object.__setattr__(self, "variant", KernelVariant(self.variant))
        if not (self.n > 0 and math.isfinite(self.n)):
            raise InvalidArgument(f"n must be positive, got {self.n}")
        g = np.asarray(grid)
        if g.size == 0 or g[0] != 0.0:
            raise InvalidGrid("time grid must start at 0")
        if np.any(np.diff(g) <= 0):
            raise InvalidGrid("time grid must be strictly increasing")
        if g[-1] > 1.0:
            raise InvalidGrid("time grid must lie in [0, 1]")
        if int(self.replicas) < 1:
            raise InvalidArgument("replicas must be >= 1")
        if not (0 <= int(self.seed) < 2**64):
            raise InvalidArgument("seed must be a 64-bit unsigned integer")

    @property
    def times(self):
        return np.asarray(self.time_grid)

    @property
    def orientation(self):
        return Orientation.UPPER if self.variant is KernelVariant.REFLECTED else Orientation.LOWER

    def to_dict(self):
        return {
            "n": self.n,
            "time_grid": list(self.time_grid),
            "hurst": self.kernel.H,
            "s": self.kernel.s,
            "variant": self.variant.value,
            "quad": asdict(self.quad),
            "replicas": int(self.replicas),
            "seed": int(self.seed),
        }

    @property
    def config_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def field_config(self, replica):
        return FieldConfig(n=self.n, seed=self.seed, orientation=self.orientation, stream=(replica,))


@dataclass
class PathSample:
    values: np.ndarray
    replica_id: int
    seed: int
    config_hash: str
    time_grid: np.ndarray = None


# -- branch bookkeeping ---------------------------------------------------------

# channel coefficients per branch as (c0, c1, c2); t and s enter linearly
def _branch_coefs(t, s):
    return np.array(
        [
            [0.0, 0.0, 0.0],  # outside the support
            [0.0, t, 0.0],
            [1.0, t + s, -1.0],
            [0.0, -s, 1.0],
            [1.0, 0.0, 0.0],
        ]
    )


def phi_branch(t, x, d, s):
    """Branch id (0 = outside, 1..4) of ``phi_t`` at ``(x, y=-d)``."""
    lower = d > t + s
    upper = (s < d) & (d <= t + s)
    return np.select(
        [
            (x > d - s) & lower,
            (x > d - s - t) & (x <= d - s) & lower,
            (x > d - s) & upper,
            (x > 0) & (x <= d - s) & upper,
        ],
        [1, 2, 3, 4],
        default=0,
    )


def _channel_antiderivatives(H):
    xs = [power_antiderivative(H - 0.5), power_antiderivative(H - 1.5)]
    ds = [power_antiderivative(0.5), power_antiderivative(1.5)]
    return xs, ds


def _stack_channels(out):
    # (x-channel, d-channel) pairs (0,0), (1,0), (1,1)
    return np.stack([out[0, 0], out[1, 0], out[1, 1]])


def _dedupe(edges, eps=1e-12):
    edges = np.sort(np.asarray(edges, dtype=float))
    keep = np.concatenate([[True], np.diff(edges) > eps])
    return edges[keep]


_CHANNEL_POWERS = ((0.5, 0.5), (-0.5, 0.5), (-0.5, 1.5))  # x^(H-1+px) d^pd


def _channel_box(H, a0, a1, b0, b1):
    """Integral of each channel over the boxes ``[a0, a1] x [b0, b1]``, shape (3, m)."""
    out = []
    for px, pd in _CHANNEL_POWERS:
        qx, qd = H - 1.0 + px + 1.0, pd + 1.0
        out.append((a1**qx - a0**qx) / qx * (b1**qd - b0**qd) / qd)
    return np.array(out)


def _channel_right_of(H, a0, a1, b0, b1, c, order=16):
    """Integral of each channel over ``{x > d - c}`` inside each box, shape (3, m).

    Exact in x; Gauss in d on pieces split where the line crosses the box's
    vertical sides, so every piece has a smooth integrand.
    """
    u, w = gauss_unit(order)
    # where the line leaves x = 0 the x-antiderivative has a (d - c)^(H - 1/2)
    # endpoint singularity; grade those pieces towards their left end
    p = min(max(1.0 / (H - 0.5), 1.0), 8.0)
    ug, wg = u**p, w * p * u ** (p - 1.0)
    cuts = np.sort(np.stack([b0, b1, np.clip(a0 + c, b0, b1), np.clip(a1 + c, b0, b1)]), axis=0)
    out = np.zeros((3, a0.size))
    for j in range(3):
        lo, hi = cuts[j], cuts[j + 1]
        graded = (a0 == 0.0) & np.isclose(lo, c + a0, rtol=0, atol=1e-14)
        uu = np.where(graded[:, None], ug[None, :], u[None, :])
        ww = np.where(graded[:, None], wg[None, :], w[None, :])
        dd = lo[:, None] + (hi - lo)[:, None] * uu
        wd = (hi - lo)[:, None] * ww
        xl = np.clip(dd - c, a0[:, None], a1[:, None])
        for k, (px, pd) in enumerate(_CHANNEL_POWERS):
            qx = H - 1.0 + px + 1.0
            out[k] += np.sum(wd * dd**pd * (a1[:, None] ** qx - xl**qx) / qx, axis=1)
    return out


def panel_channel_coefficients(t, X, D, params):
    """Channel coefficients of ``phi_t sqrt(x d)`` on every panel, shape (3, K, L).

    A panel cut by a diagonal kink mixes the branch coefficients with
    channel-weighted fractions (the share of the panel's channel integral
    lying in each branch), which is exact for constant parity. The row
    edges ``D`` must include ``s`` and ``s + t`` when they fall inside.
    """
    X = np.asarray(X, dtype=float)
    D = np.asarray(D, dtype=float)
    s, H = params.s, params.H
    for c in (s, s + t):
        if np.any((D[:-1] < c) & (D[1:] > c)):
            raise InvalidGrid(f"row edges must include the kernel kink at depth {c}")
    xc = 0.5 * (X[:-1] + X[1:])[:, None]
    dc = 0.5 * (D[:-1] + D[1:])[None, :]
    coefs = _branch_coefs(t, s)
    out = np.moveaxis(coefs[phi_branch(t, xc, dc, s)], -1, 0)
    x0, x1 = X[:-1][:, None], X[1:][:, None]
    d0, d1 = D[:-1][None, :], D[1:][None, :]
    cut = np.zeros(out.shape[1:], bool)
    for c in (s, s + t):
        cut |= (x0 - d1 + c < 0) & (x1 - d0 + c > 0)
    cut &= d1 > s
    ki, li = np.nonzero(cut)
    if ki.size == 0:
        return out
    a0, a1 = X[ki], X[ki + 1]
    b0, b1 = D[li], D[li + 1]
    full = _channel_box(H, a0, a1, b0, b1)
    right_s = _channel_right_of(H, a0, a1, b0, b1, s)
    right_st = _channel_right_of(H, a0, a1, b0, b1, s + t)
    lower = b0 >= s + t  # whole row below the t-strip (row edges include s + t)
    with np.errstate(invalid="ignore", divide="ignore"):
        f_s = np.where(full > 0, right_s / full, 0.0)
        f_st = np.where(full > 0, right_st / full, 0.0)
    # lower rows: branch 1 right of d - s, branch 2 between the two kinks
    low = coefs[1][:, None] * f_s + coefs[2][:, None] * (f_st - f_s)
    # strip rows: branch 3 right of d - s, branch 4 left of it
    up = coefs[3][:, None] * f_s + coefs[4][:, None] * (1.0 - f_s)
    out[:, ki, li] = np.where(lower[None, :], low, up)
    return out


def panel_weight_integrals(t, X, D, params):
    """Exact integrals of ``phi_t sqrt(x d)`` over every panel, shape (K, L)."""
    X = np.asarray(X, dtype=float)
    D = np.asarray(D, dtype=float)
    coef = panel_channel_coefficients(t, X, D, params)
    box = _channel_box(params.H, X[:-1, None], X[1:, None], D[None, :-1], D[None, 1:])
    return np.sum(coef * box, axis=0)


class PathIntegrator:
    """Panel grid and per-time coefficient matrix for one configuration.

    Build once and reuse across replicas; it holds no per-field state.
    """

    def __init__(self, config):
        self.config = config
        n, s = float(config.n), config.kernel.s
        if n <= s:
            raise InvalidArgument(
                f"kernel support misses the rectangle: need n > s (n={n}, s={s})"
            )
        ppa = config.quad.panels_per_axis
        h = 1.0 / ppa
        self.col_edges = np.linspace(0.0, n, int(math.ceil(n * ppa)) + 1)
        kinks = np.array([0.0, s, n] + [s + t for t in config.time_grid if s + t < n])
        grid = np.arange(s, n, h)
        # kink depths must survive exactly; drop grid rows that nearly coincide
        near = np.min(np.abs(grid[:, None] - kinks[None, :]), axis=1) < 1e-9
        self.row_edges = _dedupe(np.concatenate([kinks, grid[~near]]), eps=0.0)
        self.scale = n * math.sqrt(2.0 * config.kernel.c_H)
        self.matrix = self._build_matrix()

    @property
    def shape(self):
        return self.col_edges.size - 1, self.row_edges.size - 1

    def _coefficients(self, t):
        return panel_channel_coefficients(t, self.col_edges, self.row_edges, self.config.kernel)

    def _build_matrix(self):
        K, L = self.shape
        rows, cols, vals = [], [], []
        for i, t in enumerate(self.config.time_grid):
            if t == 0.0:
                continue
            c = self._coefficients(t).ravel()
            nz = np.nonzero(c)[0]
            rows.append(np.full(nz.size, i))
            cols.append(nz)
            vals.append(c[nz])
        T = len(self.config.time_grid)
        if rows:
            rows, cols, vals = map(np.concatenate, (rows, cols, vals))
        return sp.csr_matrix((vals, (rows, cols)), shape=(T, 3 * K * L))

    def panel_integrals(self, field):
        xa, da = _channel_antiderivatives(self.config.kernel.H)
        out = separable_panel_integrals(field.x, field.d, self.col_edges, self.row_edges, xa, da)
        return _stack_channels(out)

    def evaluate(self, field):
        values = self.scale * (self.matrix @ self.panel_integrals(field).ravel())
        values[self.config.times == 0.0] = 0.0
        return values


class NodeIntegrator(PathIntegrator):
    """Parity sampled at tensor Gauss nodes of the same panel grid.

    Carries a parity-boundary error that shrinks only once panels resolve
    the field's oscillation scale ``1 / (n x |y|)``; kept as a cross-check.
    """

    def _build_matrix(self):
        g = self.config.quad.gauss_order
        u, w = gauss_unit(g)
        X, D = self.col_edges, self.row_edges
        self.node_x = (X[:-1, None] + np.diff(X)[:, None] * u).ravel()
        self.wx = (np.diff(X)[:, None] * w).ravel()
        self.node_d = (D[:-1, None] + np.diff(D)[:, None] * u).ravel()
        self.wd = (np.diff(D)[:, None] * w).ravel()
        xx, dd = np.meshgrid(self.node_x, self.node_d, indexing="ij")
        ww = np.outer(self.wx, self.wd) * np.sqrt(xx * dd)
        params = self.config.kernel
        mats = []
        for t in self.config.time_grid:
            phi = phi_kernel_table(t, xx, -dd, params)
            mats.append(sp.csr_matrix((phi * ww).ravel()))
        return sp.vstack(mats).tocsr()

    def evaluate(self, field):
        par = parity_grid(field, self.node_x, self.node_d).astype(float)
        values = self.scale * (self.matrix @ par.ravel())
        values[self.config.times == 0.0] = 0.0
        return values


class CellIntegrator:
    """Exact evaluation on the cells induced by the points themselves.

    Parity is constant on every cell of the grid spanned by the point
    coordinates (plus the kernel kinks), and each cell's kernel mass is
    integrated exactly, so the result carries no discretization error.
    Cost grows like ``P^2`` per time; limited to ``MAX_POINTS`` points.
    """

    MAX_POINTS = 500

    def __init__(self, config):
        self.config = config
        self.scale = float(config.n) * math.sqrt(2.0 * config.kernel.c_H)

    def evaluate(self, field):
        cfg = self.config
        if len(field) > self.MAX_POINTS:
            raise CapacityError(
                f"cell decomposition is limited to {self.MAX_POINTS} points, field has {len(field)}"
            )
        n, s = float(cfg.n), cfg.kernel.s
        inside = (field.x <= n) & (field.d <= n)
        X = _dedupe(np.concatenate([[0.0, n], field.x[inside]]), eps=0.0)
        D = _dedupe(np.concatenate([[0.0, s, n], [s + t for t in cfg.time_grid if s + t < n],
                                    field.d[inside]]), eps=0.0)
        xm = 0.5 * (X[:-1] + X[1:])
        dm = 0.5 * (D[:-1] + D[1:])
        par = parity_grid(field, xm, dm).astype(float)
        values = np.array([
            float(np.sum(par * panel_weight_integrals(t, X, D, cfg.kernel))) if t > 0 else 0.0
            for t in cfg.time_grid
        ])
        return self.scale * values


@lru_cache(maxsize=8)
def integrator_for(config):
    if config.quad.method == "cells":
        return CellIntegrator(config)
    cls = NodeIntegrator if config.quad.method == "nodes" else PathIntegrator
    return cls(config)


def _check_field(field, config):
    if not math.isclose(field.config.n, config.n) or not math.isclose(field.config.intensity, config.n):
        raise InvalidArgument("field intensity does not match the approximation index n")
    if field.config.width < config.n or field.config.depth < config.n:
        raise InvalidArgument("field must cover [0, n] x [-n, 0]")
    if field.config.orientation is not config.orientation:
        raise InvalidArgument(
            f"{config.variant.value} kernel needs a field with orientation {config.orientation.value}"
        )


def evaluate_path(field, config, replica_id=0, check_refinement=False, refinement_bound=1e-3):
    """Evaluate ``Y_n`` on the configured time grid for one field.

    With ``check_refinement`` the path is recomputed on a grid refined by
    ``quad.refinement_factor`` and :class:`ToleranceNotMet` is raised if any
    value moves by more than ``refinement_bound`` times the path's sup-norm.
    """
    _check_field(field, config)
    values = integrator_for(config).evaluate(field)
    if check_refinement:
        fine_cfg = ApproxConfig(
            n=config.n, time_grid=config.time_grid, kernel=config.kernel,
            variant=config.variant, quad=config.quad.refined(),
            replicas=config.replicas, seed=config.seed,
        )
        fine = integrator_for(fine_cfg).evaluate(field)
        scale = max(np.max(np.abs(fine)), np.finfo(float).tiny)
        dev = np.max(np.abs(fine - values))
        if dev > refinement_bound * scale:
            raise ToleranceNotMet(
                f"panel refinement moved the path by {dev / scale:.2e} (relative to sup-norm)",
                estimate=(values, fine),
                error=dev,
            )
    return PathSample(values=values, replica_id=int(replica_id), seed=int(config.seed),
                      config_hash=config.config_hash, time_grid=config.times)


def _worker_count():
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def simulate_paths(config, replicas=None, start=0, workers=None):
    """Sample ``replicas`` independent fields and evaluate one path each.

    Replica ``r`` draws its field from stream ``(config.seed, r)``, so the
    output does not depend on the number of workers.
    """
    replicas = int(config.replicas if replicas is None else replicas)
    integrator_for(config)  # build once before fanning out

    def one(r):
        f = sample_field(config.field_config(r))
        return evaluate_path(f, config, replica_id=r)

    ids = range(start, start + replicas)
    workers = workers or _worker_count()
    if workers == 1:
        return [one(r) for r in ids]
    with ThreadPoolExecutor(workers) as pool:
        return sorted(pool.map(one, ids), key=lambda p: p.replica_id)


def paths_matrix(paths):
    return np.vstack([p.values for p in paths])


def write_paths_csv(paths, path):
    """``replica,t,value`` rows, shortest round-trip float formatting."""
    with open(path, "w") as fh:
        fh.write("replica,t,value\n")
        for p in paths:
            for t, v in zip(p.time_grid, p.values):
                fh.write(f"{p.replica_id},{float(t)!r},{float(v)!r}\n")


def read_paths_csv(path):
    """Inverse of :func:`write_paths_csv`; returns ``(replica_ids, times, values)``."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    ids = np.unique(data[:, 0]).astype(int)
    times = np.unique(data[:, 1])
    values = np.full((ids.size, times.size), np.nan)
    ri = np.searchsorted(ids, data[:, 0].astype(int))
    ti = np.searchsorted(times, data[:, 1])
    values[ri, ti] = data[:, 2]
    return ids, times, values


# -- semi-analytic variance ------------------------------------------------------


def kernel_weight(t, x, d, params):
    """``phi_t(x, -d) sqrt(x d)``, zero outside ``x > 0, d >= 0``."""
    x = np.asarray(x, dtype=float)
    d = np.asarray(d, dtype=float)
    ok = (x > 0) & (d >= 0)
    xs = np.where(ok, x, 1.0)
    ds = np.where(ok, d, 0.0)
    return np.where(ok, phi_kernel_table(t, xs, -ds, params) * np.sqrt(xs * ds), 0.0)


def pair_correlation_depth(n, x1, d1, x2, d2):
    """Vectorized ``E[(-1)^(N(p1)+N(p2))] = exp(-2n |R1 symdiff R2|)`` in depth coordinates."""
    sym = x1 * d1 + x2 * d2 - 2.0 * np.minimum(x1, x2) * np.minimum(d1, d2)
    return np.exp(-2.0 * n * sym)


@dataclass
class VarianceEstimate:
    value: float
    stderr: float
    samples: int


class _CellProposal:
    """Piecewise-constant density on a cell grid, proportional to a mix of
    ``phi_t^2`` cell masses and a uniform floor over the support box."""

    def __init__(self, t, n, params, cells=96, floor=0.05):
        s = params.s
        self.x_edges = np.linspace(0.0, n, cells + 1)
        self.d_edges = np.linspace(s, n, cells + 1)
        u, w = gauss_unit(3)
        xe, de = self.x_edges, self.d_edges
        xn = xe[:-1, None] + np.diff(xe)[:, None] * u
        dn = de[:-1, None] + np.diff(de)[:, None] * u
        X = xn[:, None, :, None]
        Dd = dn[None, :, None, :]
        phi2 = phi_kernel_table(t, np.broadcast_to(X, (cells, cells, 3, 3)),
                                -np.broadcast_to(Dd, (cells, cells, 3, 3)), params) ** 2
        area = np.outer(np.diff(xe), np.diff(de))
        mass = (phi2 * w[:, None] * w[None, :]).sum(axis=(2, 3)) * area
        mass = mass / mass.sum()
        unif = area / area.sum()
        self.p = (1 - floor) * mass + floor * unif
        self.density = self.p / area
        self.cdf = np.cumsum(self.p.ravel())
        self.cdf /= self.cdf[-1]
        self.cells = cells

    def sample(self, rng, size):
        idx = np.minimum(np.searchsorted(self.cdf, rng.random(size), side="right"), self.cdf.size - 1)
        i, j = np.divmod(idx, self.cells)
        xe, de = self.x_edges, self.d_edges
        x = xe[i] + (xe[i + 1] - xe[i]) * rng.random(size)
        d = de[j] + (de[j + 1] - de[j]) * rng.random(size)
        return x, d

    def pdf(self, x, d):
        i = np.searchsorted(self.x_edges, x, side="right") - 1
        j = np.searchsorted(self.d_edges, d, side="right") - 1
        inside = (i >= 0) & (i < self.cells) & (j >= 0) & (j < self.cells)
        out = np.zeros(np.shape(x))
        out[inside] = self.density[i[inside], j[inside]]
        return out


def variance_oracle(config, t, samples=2**21, seed=12345, se_bound=None, local_share=0.9,
                    widen=1.5, chunk=2**18, method="mc", order=4):
    """``E[Y_n(t)^2]`` from the exact parity pair correlation.

    The four-dimensional integral
    ``2 c_H n^2 iint iint w(p1) w(p2) rho_n(p1, p2)`` (``w = phi_t sqrt(x|y|)``)
    is estimated by importance sampling: ``p1`` from a cell density shaped
    like ``phi_t^2``, ``p2`` from a defensive mixture of a Laplace kernel
    around ``p1`` (scales matched to the correlation lengths
    ``1/(2n|y1|)`` and ``1/(2n x1)``) and the same cell density. The
    estimator is unbiased and its weights are bounded.

    ``method="quadrature"`` instead applies a tensor Gauss rule to both
    points; only sensible for tiny ``n``.

    Raises
    ------
    ToleranceNotMet
        If ``se_bound`` is given and the standard error exceeds it.
    """
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise InvalidArgument("t must lie in [0, 1]")
    params, n = config.kernel, float(config.n)
    if t == 0.0 or n <= params.s:
        return VarianceEstimate(0.0, 0.0, 0)
    pref = 2.0 * params.c_H * n * n
    if method == "quadrature":
        return _variance_quadrature(config, t, order)
    prop = _CellProposal(t, n, params)
    rng = rng_for(seed, 7)
    total = total_sq = 0.0
    done = 0
    while done < samples:
        m = min(chunk, samples - done)
        x1, d1 = prop.sample(rng, m)
        q1 = prop.pdf(x1, d1)
        lx = 2.0 * n * d1 / widen
        ld = 2.0 * n * np.maximum(x1, 1e-12) / widen
        local = rng.random(m) < local_share
        x2, d2 = prop.sample(rng, m)
        lap_x = rng.laplace(0.0, 1.0, m) / lx
        lap_d = rng.laplace(0.0, 1.0, m) / ld
        x2 = np.where(local, x1 + lap_x, x2)
        d2 = np.where(local, d1 + lap_d, d2)
        q_loc = 0.25 * lx * ld * np.exp(-lx * np.abs(x2 - x1) - ld * np.abs(d2 - d1))
        q2 = local_share * q_loc + (1 - local_share) * prop.pdf(x2, d2)
        inside = (x2 > 0) & (x2 <= n) & (d2 >= 0) & (d2 <= n)
        w1 = kernel_weight(t, x1, d1, params)
        w2 = np.where(inside, kernel_weight(t, np.clip(x2, 0, n), np.clip(d2, 0, n), params), 0.0)
        rho = pair_correlation_depth(n, x1, d1, np.abs(x2), np.abs(d2))
        val = pref * w1 * w2 * rho / (q1 * q2)
        total += val.sum()
        total_sq += (val * val).sum()
        done += m
    mean = total / done
    se = math.sqrt(max(total_sq / done - mean * mean, 0.0) / (done - 1))
    if se_bound is not None and se > se_bound:
        raise ToleranceNotMet(f"variance oracle standard error {se:.3g} above {se_bound:.3g}",
                              estimate=mean, error=se)
    return VarianceEstimate(mean, se, done)


def mean_oracle(config, t, order=32):
    """``E[Y_n(t)] = n sqrt(2 c_H) iint w(x, d) exp(-2 n x d)``.

    Nonzero for finite ``n`` because ``E[(-1)^N] = exp(-2n x d)``; it decays
    like ``1/n`` in the limit. Deterministic tensor Gauss rule with the kernel
    kinks as breakpoints (per depth node) and graded panels at ``x = 0``.
    """
    t = float(t)
    params, n = config.kernel, float(config.n)
    s, H = params.s, params.H
    if t == 0.0 or n <= s:
        return 0.0
    # the inner integral behaves like (d - s)^(H + 1/2) at d = s: grade towards it
    graded = s + min(t, n - s) * 2.0 ** -np.arange(0, 30)
    d_edges = _dedupe([s, min(s + t, n)] + list(np.linspace(s, n, 33)) + list(graded))
    dn, wd = panel_rule(d_edges, order)
    total = 0.0
    u, w = gauss_unit(order)
    for d, wdi in zip(dn, wd):
        cuts = sorted({c for c in (d - s - t, d - s) if 0 < c < n} | {n})
        # integrand ~ x^(H - 1/2) at 0; this power makes it linear in u
        x0, w0 = power_graded_rule(cuts[0], order, 2.0 / (H + 0.5))
        x1, w1 = panel_rule(_dedupe(cuts + list(np.geomspace(cuts[0], n, 12))), order)
        xs = np.concatenate([x0, x1])
        ws = np.concatenate([w0, w1])
        total += wdi * float(np.sum(ws * kernel_weight(t, xs, d, params) * np.exp(-2.0 * n * xs * d)))
    return n * math.sqrt(2.0 * params.c_H) * total


def _variance_quadrature(config, t, order):
    params, n = config.kernel, float(config.n)
    integ = PathIntegrator(config)
    u, w = gauss_unit(order)
    X, D = integ.col_edges, integ.row_edges
    xn = (X[:-1, None] + np.diff(X)[:, None] * u).ravel()
    wx = (np.diff(X)[:, None] * w).ravel()
    dn = (D[:-1, None] + np.diff(D)[:, None] * u).ravel()
    wd = (np.diff(D)[:, None] * w).ravel()
    xx, dd = np.meshgrid(xn, dn, indexing="ij")
    ww = (np.outer(wx, wd) * kernel_weight(t, xx, dd, params)).ravel()
    keep = ww != 0
    xs, ds, ws = xx.ravel()[keep], dd.ravel()[keep], ww[keep]
    total = 0.0
    for i in range(0, xs.size, 2048):
        rho = pair_correlation_depth(n, xs[i:i + 2048, None], ds[i:i + 2048, None], xs[None], ds[None])
        total += float(ws[i:i + 2048] @ rho @ ws)
    return VarianceEstimate(2.0 * params.c_H * n * n * total, float("nan"), xs.size**2)


def truncation_loss(t, params, n, quad=None):
    """Limit variance the rectangle ``[0, n] x [-n, 0]`` misses at time t."""
    if t == 0:
        return 0.0
    return t ** (2 * params.H) - kernel_inner_product(t, t, params, quad, extent=n)


# -- Brownian-sheet approximation -------------------------------------------------


def sheet_field_config(n, width=1.0, depth=1.0, seed=0, stream=()):
    """Intensity-``n`` field on ``[0, width] x [-depth, 0]`` for :func:`sheet_approx`."""
    return FieldConfig(n=n, seed=seed, width=width, depth=depth, intensity=n, stream=stream)


def sheet_approx_grid(field, n, us, vs):
    """``B_n(u, v)`` for every ``u`` in ``us`` and ``v`` in ``vs`` (outer grid).

    ``B_n(u, v) = sgn(uv) n int_0^|u| int_0^|v| sqrt(x d) (-1)^N dx dd``;
    arguments are taken in absolute value within the field's quadrant, with
    ``sgn(0) = +1``.
    """
    if not math.isclose(field.config.intensity, n):
        raise InvalidArgument("field intensity must equal n")
    us = np.atleast_1d(np.asarray(us, dtype=float))
    vs = np.atleast_1d(np.asarray(vs, dtype=float))
    au, av = np.abs(us), np.abs(vs)
    if np.any(au > field.config.width) or np.any(av > field.config.depth):
        raise InvalidArgument("sheet argument outside the sampled rectangle")
    X = np.unique(np.concatenate([[0.0], au]))
    D = np.unique(np.concatenate([[0.0], av]))
    root = [power_antiderivative(0.5)]
    out = np.zeros((au.size, av.size))
    if X.size > 1 and D.size > 1:
        panels = separable_panel_integrals(field.x, field.d, X, D, root, root)[0, 0]
        cum = np.zeros((X.size, D.size))
        cum[1:, 1:] = panels.cumsum(axis=0).cumsum(axis=1)
        out = cum[np.searchsorted(X, au)[:, None], np.searchsorted(D, av)[None, :]]
    sign = np.where(np.outer(us, vs) >= 0, 1.0, -1.0)
    return sign * n * out


def sheet_approx(field, n, u, v):
    return float(sheet_approx_grid(field, n, [u], [v])[0, 0])


# -- bound constants ----------------------------------------------------------------


def q_function(z):
    """``Q(z) = e^(-2z) z int_1^z e^(2w)/w dw`` for ``z >= 1``."""
    z = np.asarray(z, dtype=float)
    return z * np.exp(-2 * z) * (expi(2 * z) - expi(2.0))


@lru_cache(maxsize=1)
def q_supremum():
    """``sup_{z >= 1} Q(z)``, found numerically.

    Beyond ``z = 40`` the asymptotic ``Q(z) = 1/2 + 1/(4z) + O(z^-2)`` stays
    far below the interior maximum, so the search is restricted to [1, 40].
    """
    z = np.linspace(1.0, 40.0, 4001)
    i = int(np.argmax(q_function(z)))
    lo, hi = z[max(i - 2, 0)], z[min(i + 2, z.size - 1)]
    res = minimize_scalar(lambda v: -float(q_function(v)), bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-12})
    return float(-res.fun), float(res.x)


@dataclass(frozen=True)
class BoundConstants:
    K1: float
    K2: float
    C: float
    K: float


def bound_constants(params, C=None):
    """Constants of the second-moment bound ``E[Y^2] <= K t^2H`` (before the
    ``2 c_H`` normalization). ``C`` defaults to ``sup Q``."""
    H, s = params.H, params.s
    if C is None:
        C = q_supremum()[0]
    K1 = 3.0 / (8 * H * (2 * H - 1)) + 1.0 / (8 * H * (3 - 2 * H)) + 1.0 / (4 * H * H - 1)
    K2 = 1.0 / (4 * (1 - H) * (3 - 2 * H) * (2 * H - 1))
    K = 3.0 * (111.0 / 8 + 2 * K1 * math.sqrt((1 + s) / s) + 2 * K2 * math.sqrt((2 + s) / s) + 2 * K2 * C)
    return BoundConstants(K1=K1, K2=K2, C=C, K=K)
