import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from poisson_fbm.errors import CapacityError, InvalidArgument
from poisson_fbm.field import (
    FieldConfig,
    Orientation,
    PairRegion,
    PointField,
    pair_correlation_exact,
    pair_region,
    parity_at,
    parity_batch,
    parity_grid,
    point_counts,
    rng_for,
    sample_field,
    write_field_csv,
)
from poisson_fbm.pathgen import pair_correlation_depth


def test_expected_count_and_determinism():
    cfg = FieldConfig(n=3, seed=11)
    assert cfg.expected_count == pytest.approx(27.0)
    a, b = sample_field(cfg), sample_field(cfg)
    np.testing.assert_array_equal(a.points, b.points)
    c = sample_field(FieldConfig(n=3, seed=11, stream=(1,)))
    assert len(c) != len(a) or not np.array_equal(c.points, a.points)


def test_sample_mean_count():
    counts = [len(sample_field(FieldConfig(n=3, seed=1, stream=(r,)))) for r in range(400)]
    assert np.mean(counts) == pytest.approx(27.0, abs=4 * np.sqrt(27 / 400))


def test_points_inside_rectangle_and_readonly():
    f = sample_field(FieldConfig(n=4, seed=2))
    assert np.all((f.x >= 0) & (f.x <= 4) & (f.y <= 0) & (f.y >= -4))
    with pytest.raises(ValueError):
        f.x[0] = 1.0


def test_capacity_error_names_cap():
    with pytest.raises(CapacityError, match="max_points=1000"):
        sample_field(FieldConfig(n=20, max_points=1000))


def test_invalid_configs():
    with pytest.raises(InvalidArgument):
        FieldConfig(n=0)
    with pytest.raises(InvalidArgument):
        FieldConfig(n=1, seed=-1)


def test_parity_closed_boundaries():
    f = PointField.from_points(FieldConfig(n=2), [(1.0, -1.0)])
    assert parity_at(f, 1.0, -1.0) == -1  # point on the corner counts
    assert parity_at(f, 0.999, -1.0) == 1
    assert parity_at(f, 2.0, -0.5) == 1
    assert parity_at(f, 2.0, -2.0) == -1


def test_empty_field_parity_is_one():
    f = PointField.from_points(FieldConfig(n=2), np.zeros((0, 2)))
    assert np.all(parity_batch(f, [(0.5, -0.5), (2.0, -2.0)]) == 1)


def test_query_outside_rectangle_rejected():
    f = sample_field(FieldConfig(n=2))
    with pytest.raises(InvalidArgument):
        parity_batch(f, [(0.5, 0.5)])


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1))
def test_counts_match_brute_force(seed):
    f = sample_field(FieldConfig(n=2.5, seed=seed))
    rng = np.random.default_rng(seed)
    q = np.column_stack([rng.uniform(0, 2.5, 50), -rng.uniform(0, 2.5, 50)])
    q[:5] = f.points[:5] if len(f) >= 5 else q[:5]  # exercise ties
    brute = ((f.x[None, :] <= q[:, :1]) & (f.d[None, :] <= -q[:, 1:])).sum(axis=1)
    np.testing.assert_array_equal(point_counts(f, q), brute)


def test_parity_grid_matches_batch():
    f = sample_field(FieldConfig(n=3, seed=5))
    xs, ds = np.linspace(0.1, 3, 7), np.linspace(0.1, 3, 5)
    grid = parity_grid(f, xs, ds)
    q = np.array([(x, -d) for x in xs for d in ds])
    np.testing.assert_array_equal(grid.ravel(), parity_batch(f, q))


def test_mirror_equivariance():
    f = sample_field(FieldConfig(n=3, seed=9))
    m = f.mirrored()
    assert m.config.orientation is Orientation.UPPER
    q = np.array([(0.7, -1.2), (2.5, -0.1), (3.0, -3.0)])
    np.testing.assert_array_equal(parity_batch(f, q), parity_batch(m, q * [1, -1]))


def test_csv_round_trip(tmp_path):
    f = sample_field(FieldConfig(n=2, seed=3))
    path = tmp_path / "f.csv"
    write_field_csv(f, path)
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    g = PointField.from_points(FieldConfig(n=2), data)
    np.testing.assert_array_equal(g.x, f.x)
    np.testing.assert_array_equal(g.d, f.d)


def test_rng_streams_independent_of_order():
    a = rng_for(7, 3).standard_normal(4)
    rng_for(7, 2).standard_normal(100)
    np.testing.assert_array_equal(a, rng_for(7, 3).standard_normal(4))


@pytest.mark.parametrize(
    "p1,p2,region",
    [
        ((0.2, -0.5), (0.6, -0.8), PairRegion.OMEGA1),
        ((0.2, -0.8), (0.6, -0.5), PairRegion.OMEGA2),
        ((0.6, -0.5), (0.2, -0.8), PairRegion.OMEGA3),
        ((0.6, -0.8), (0.2, -0.5), PairRegion.OMEGA4),
    ],
)
def test_pair_regions_and_symmetric_difference(p1, p2, region):
    assert pair_region(p1, p2) is region
    n = 1.7
    exact = pair_correlation_exact(n, p1, p2)
    indep = pair_correlation_depth(n, p1[0], -p1[1], p2[0], -p2[1])
    assert exact == pytest.approx(float(indep), rel=1e-12)
    assert 0 < exact < 1


def test_pair_correlation_identical_points():
    assert pair_correlation_exact(3.0, (0.5, -0.5), (0.5, -0.5)) == 1.0


def test_pair_correlation_rejects_bad_points():
    with pytest.raises(InvalidArgument):
        pair_correlation_exact(1.0, (0.0, -0.5), (0.5, -0.5))
    with pytest.raises(InvalidArgument):
        pair_correlation_exact(1.0, (0.5, 0.5), (0.5, -0.5))
