"""Two-parameter Poisson point fields and parity queries.

A field with intensity ``n`` on ``[0, n] x [-n, 0]`` is sampled directly
rather than as a unit-rate process on the rescaled rectangle; the two are
equal in law (the count of any rectangle is Poisson with mean ``n * area``
either way).

Internally every field works in *depth* coordinates ``d = |y|``, so the
count behind the parity at ``(x, y)`` is the number of points in the
origin-anchored rectangle ``[0, x] x [0, |y|]``. Closed rectangles are used:
a point lying on the query boundary is counted.
"""

import csv
from dataclasses import dataclass, field as dc_field
from enum import Enum

import numba
import numpy as np

from .errors import CapacityError, InvalidArgument

DEFAULT_MAX_POINTS = 20_000_000


class Orientation(str, Enum):
    LOWER = "lower"  # [0, W] x [-D, 0]
    UPPER = "upper"  # [0, W] x [0, D]


class PairRegion(str, Enum):
    OMEGA1 = "omega1"  # x1 <= x2, y2 <= y1 <= 0
    OMEGA2 = "omega2"  # x1 <= x2, y1 < y2 <= 0
    OMEGA3 = "omega3"  # x1 > x2, y1 >= y2
    OMEGA4 = "omega4"  # x1 > x2, y1 < y2


def rng_for(seed, *stream):
    """Counter-based generator for ``(seed, *stream)``.

    Distinct stream keys hash to non-overlapping Philox streams, so replica
    ``r`` of master seed ``m`` is ``rng_for(m, r)`` regardless of scheduling.
    """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, stream)])))


@dataclass(frozen=True)
class FieldConfig:
    """Sampling configuration.

    ``width`` and ``depth`` default to ``n`` and ``intensity`` defaults to
    ``n``, giving the ``[0, n] x [-n, 0]`` field with ``n**3`` expected
    points.
    """

    n: float
    seed: int = 0
    width: float = None
    depth: float = None
    intensity: float = None
    orientation: Orientation = Orientation.LOWER
    stream: tuple = ()
    max_points: int = DEFAULT_MAX_POINTS

    def __post_init__(self):
        if not (self.n > 0 and np.isfinite(self.n)):
            raise InvalidArgument(f"n must be positive, got {self.n}")
        if not (0 <= int(self.seed) < 2**64):
            raise InvalidArgument("seed must be a 64-bit unsigned integer")
        for name in ("width", "depth", "intensity"):
            if getattr(self, name) is None:
                object.__setattr__(self, name, float(self.n))
            elif not getattr(self, name) > 0:
                raise InvalidArgument(f"{name} must be positive")
        object.__setattr__(self, "orientation", Orientation(self.orientation))
        object.__setattr__(self, "stream", tuple(int(v) for v in self.stream))

    @property
    def area(self):
        return self.width * self.depth

    @property
    def expected_count(self):
        return self.intensity * self.area


@dataclass(frozen=True, eq=False)
class PointField:
    """Immutable realized point set plus its parity index.

    ``x`` and ``d`` hold the points sorted by ``x`` (then depth); ``d`` is the
    depth ``|y|``.
    """

    config: FieldConfig
    x: np.ndarray
    d: np.ndarray
    _d_sorted: np.ndarray = dc_field(repr=False, default=None)
    _d_rank: np.ndarray = dc_field(repr=False, default=None)

    def __post_init__(self):
        order = np.lexsort((self.d, self.x))
        x = np.ascontiguousarray(self.x[order], dtype=float)
        d = np.ascontiguousarray(self.d[order], dtype=float)
        d_sorted = np.sort(d)
        # 1-based Fenwick slot of each point (ties share the leftmost slot)
        d_rank = np.searchsorted(d_sorted, d, side="left").astype(np.int64) + 1
        for name, arr in (("x", x), ("d", d), ("_d_sorted", d_sorted), ("_d_rank", d_rank)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    def __len__(self):
        return self.x.size

    @property
    def y(self):
        return self.d if self.config.orientation is Orientation.UPPER else -self.d

    @property
    def points(self):
        return np.column_stack([self.x, self.y])

    def depth_of(self, y):
        y = np.asarray(y, dtype=float)
        return y if self.config.orientation is Orientation.UPPER else -y

    def mirrored(self):
        """The same points reflected in the x-axis (orientation flipped)."""
        cfg = self.config
        flipped = Orientation.UPPER if cfg.orientation is Orientation.LOWER else Orientation.LOWER
        new_cfg = FieldConfig(
            n=cfg.n, seed=cfg.seed, width=cfg.width, depth=cfg.depth,
            intensity=cfg.intensity, orientation=flipped, stream=cfg.stream,
            max_points=cfg.max_points,
        )
        return PointField(new_cfg, self.x.copy(), self.d.copy())

    @classmethod
    def from_points(cls, config, points):
        """Build a field from explicit ``(x, y)`` points in the config's rectangle."""
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        d = pts[:, 1] if config.orientation is Orientation.UPPER else -pts[:, 1]
        if np.any((pts[:, 0] < 0) | (pts[:, 0] > config.width) | (d < 0) | (d > config.depth)):
            raise InvalidArgument("points must lie inside the field rectangle")
        return cls(config, pts[:, 0].copy(), d.copy())


def sample_field(config):
    """Draw a Poisson field: ``K ~ Poisson(intensity * area)``, then ``K``
    i.i.d. uniform points. Bit-exact for a given ``(seed, stream)``."""
    if config.expected_count > config.max_points:
        raise CapacityError(
            f"expected point count {config.expected_count:.3g} exceeds the cap "
            f"max_points={config.max_points}"
        )
    rng = rng_for(config.seed, *config.stream)
    k = int(rng.poisson(config.expected_count))
    x = rng.uniform(0.0, config.width, size=k)
    d = rng.uniform(0.0, config.depth, size=k)
    return PointField(config, x, d)


def write_field_csv(field, path):
    """Dump points as ``x,y`` rows sorted by x then y."""
    pts = field.points
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y"])
        for x, y in pts[order]:
            w.writerow([repr(float(x)), repr(float(y))])


# -- parity queries -----------------------------------------------------------


@numba.njit(cache=True, nogil=True)
def _sweep_counts(px, prank, d_sorted, qx, qd):
    """Dominance counts ``#{p : px <= qx, pd <= qd}`` by an x-sweep over a
    Fenwick tree on rank-compressed depths. ``px`` must be sorted."""
    m = d_sorted.size
    tree = np.zeros(m + 1, np.int64)
    order = np.argsort(qx, kind="mergesort")
    out = np.empty(qx.size, np.int64)
    j = 0
    for q in order:
        x = qx[q]
        while j < px.size and px[j] <= x:
            i = prank[j]
            while i <= m:
                tree[i] += 1
                i += i & (-i)
            j += 1
        # slots with depth <= qd
        k = np.searchsorted(d_sorted, qd[q], side="right")
        c = 0
        while k > 0:
            c += tree[k]
            k -= k & (-k)
        out[q] = c
    return out


def _query_depths(field, queries):
    q = np.asarray(queries, dtype=float).reshape(-1, 2)
    qx = np.ascontiguousarray(q[:, 0])
    qd = np.ascontiguousarray(field.depth_of(q[:, 1]))
    cfg = field.config
    bad = (qx < 0) | (qx > cfg.width) | (qd < 0) | (qd > cfg.depth) | ~np.isfinite(qx) | ~np.isfinite(qd)
    if np.any(bad):
        raise InvalidArgument("parity query outside the field rectangle")
    return qx, qd


def point_counts(field, queries):
    """Number of field points in the prefix rectangle of each query."""
    qx, qd = _query_depths(field, queries)
    if qx.size == 0:
        return np.zeros(0, np.int64)
    return _sweep_counts(field.x, field._d_rank, field._d_sorted, qx, qd)


def parity_batch(field, queries):
    """``(-1) ** N(x, y)`` for every ``(x, y)`` in ``queries``, as int8."""
    c = point_counts(field, queries)
    return (1 - 2 * (c & 1)).astype(np.int8)


def parity_at(field, x, y):
    return int(parity_batch(field, [(x, y)])[0])


def parity_grid(field, xs, ds):
    """Parity on the tensor grid ``xs x ds`` (depth coordinates, both sorted
    ascending), shape ``(len(xs), len(ds))``. Uses a 2-D histogram and
    cumulative sums instead of per-query counting."""
    xs = np.asarray(xs, dtype=float)
    ds = np.asarray(ds, dtype=float)
    ix = np.searchsorted(xs, field.x, side="left")
    idd = np.searchsorted(ds, field.d, side="left")
    keep = (ix < xs.size) & (idd < ds.size)
    hist = np.zeros((xs.size, ds.size), np.int64)
    np.add.at(hist, (ix[keep], idd[keep]), 1)
    counts = hist.cumsum(axis=0).cumsum(axis=1)
    return (1 - 2 * (counts & 1)).astype(np.int8)


# -- exact pair correlation ------------------------------------------------------


def pair_region(p1, p2):
    (x1, y1), (x2, y2) = p1, p2
    if x1 <= x2:
        return PairRegion.OMEGA1 if y2 <= y1 else PairRegion.OMEGA2
    return PairRegion.OMEGA3 if y1 >= y2 else PairRegion.OMEGA4


def pair_correlation_exact(n, p1, p2):
    """``E[(-1)^(N_n(p1) + N_n(p2))]`` for points with ``x > 0, y <= 0``."""
    (x1, y1), (x2, y2) = (map(float, p1)), (map(float, p2))
    if not n > 0:
        raise InvalidArgument("intensity must be positive")
    if x1 <= 0 or x2 <= 0 or y1 > 0 or y2 > 0:
        raise InvalidArgument("pair correlation needs x > 0 and y <= 0")
    region = pair_region((x1, y1), (x2, y2))
    if region is PairRegion.OMEGA1:
        e = x1 * y1 - x2 * y2
    elif region is PairRegion.OMEGA2:
        e = x1 * (y2 - y1) - (x2 - x1) * y2
    elif region is PairRegion.OMEGA3:
        e = x2 * (y1 - y2) - (x1 - x2) * y1
    else:
        e = x2 * y2 - x1 * y1
    return float(np.exp(-2.0 * n * e))
