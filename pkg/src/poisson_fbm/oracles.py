"""Exact Gaussian reference samplers: fBm on a grid and Brownian-sheet cells."""

import hashlib
import json
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy import linalg

from .errors import CapacityError, InvalidArgument, InvalidGrid
from .field import rng_for
from .kernels import fbm_covariance

MAX_GRID = 4096


@dataclass(frozen=True)
class OracleConfig:
    H: float
    time_grid: tuple = dc_field(default_factory=lambda: tuple(np.linspace(0.0, 1.0, 64)))
    replicas: int = 5000
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.H < 1.0):
            raise InvalidArgument(f"H must lie in (0, 1), got {self.H}")
        grid = tuple(float(t) for t in np.atleast_1d(self.time_grid))
        object.__setattr__(self, "time_grid", grid)
        if int(self.replicas) < 1:
            raise InvalidArgument("replicas must be >= 1")

    @property
    def config_hash(self):
        blob = json.dumps(
            {"H": self.H, "time_grid": list(self.time_grid), "replicas": int(self.replicas), "seed": int(self.seed)},
            sort_keys=True,
        ).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _cholesky_factor(times, H):
    cov = fbm_covariance(times[:, None], times[None, :], H)
    try:
        return linalg.cholesky(cov, lower=True)
    except linalg.LinAlgError as exc:
        raise InvalidGrid(f"covariance on this grid is not positive definite: {exc}") from exc


def fbm_exact_paths(config, replicas=None, start=0):
    """Exact fBm draws on ``config.time_grid`` via a Cholesky factor.

    The factor is built on the nonzero times only (the covariance is singular
    at ``t = 0``), and ``X(0) = 0`` is inserted afterwards. Returns an array
    of shape ``(replicas, len(time_grid))``; replica ``r`` uses stream
    ``(seed, r)`` so any slice of replicas can be regenerated on its own.

    Raises
    ------
    InvalidGrid
        Duplicate or negative times, or a numerically singular covariance.
    CapacityError
        More than ``MAX_GRID`` grid points.
    """
    times = np.asarray(config.time_grid, dtype=float)
    if np.any(times < 0) or np.any(np.diff(times) <= 0):
        raise InvalidGrid("time grid must be non-negative and strictly increasing")
    if times.size > MAX_GRID:
        raise CapacityError(f"time grid of {times.size} points exceeds MAX_GRID={MAX_GRID}")
    replicas = int(config.replicas if replicas is None else replicas)
    nz = times > 0
    L = _cholesky_factor(times[nz], config.H)
    out = np.zeros((replicas, times.size))
    for i, r in enumerate(range(start, start + replicas)):
        z = rng_for(config.seed, r).standard_normal(L.shape[0])
        out[i, nz] = L @ z
    return out


def gaussian_sheet_cell(seed, rectangle, stream=()):
    """Centered Gaussian white-noise mass of ``rectangle = (x0, x1, y0, y1)``.

    The variance equals the rectangle's area, so sums over disjoint cells
    reproduce a Brownian sheet on their union.
    """
    x0, x1, y0, y1 = map(float, rectangle)
    if x1 < x0 or y1 < y0:
        raise InvalidArgument("rectangle must satisfy x0 <= x1 and y0 <= y1")
    area = (x1 - x0) * (y1 - y0)
    return float(np.sqrt(area) * rng_for(seed, *stream).standard_normal())


def brownian_sheet_grid(seed, us, vs, replicas=1):
    """Brownian sheet on the tensor grid ``us x vs`` (both increasing, from 0 excluded)
    by cumulative sums of independent cell masses. Shape ``(replicas, len(us), len(vs))``."""
    us = np.asarray(us, dtype=float)
    vs = np.asarray(vs, dtype=float)
    du = np.diff(np.concatenate([[0.0], us]))
    dv = np.diff(np.concatenate([[0.0], vs]))
    if np.any(du < 0) or np.any(dv < 0):
        raise InvalidGrid("sheet grid must be non-negative and increasing")
    rng = rng_for(seed, 0)
    cells = rng.standard_normal((replicas, us.size, vs.size)) * np.sqrt(np.outer(du, dv))
    return cells.cumsum(axis=1).cumsum(axis=2)
