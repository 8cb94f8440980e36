import time

import numpy as np
import pytest
from scipy.stats import ks_2samp

from oracles import pg_series_draw, pg_series_mean
from tvpnet.polyagamma import pg_draw, pg_mean


def test_pg_mean_values():
    assert pg_mean(0.0) == pytest.approx(0.25)
    assert pg_mean(2.0) == pytest.approx(0.190399, abs=1e-6)
    assert pg_mean(-2.0) == pg_mean(2.0)
    assert pg_mean(1e-9) == pytest.approx(0.25)
    for z in (0.0, 0.5, 3.0):
        assert pg_mean(z) == pytest.approx(pg_series_mean(z), rel=2e-3)


def test_pg_mean_vectorized():
    z = np.array([-3.0, 0.0, 1e-6, 4.0])
    out = pg_mean(z)
    assert out.shape == z.shape
    np.testing.assert_allclose(out, [pg_mean(float(v)) for v in z])


@pytest.mark.parametrize("z", [0.0, 1.0, 2.0, 3.0, 10.0, -2.0])
def test_pg_draw_mean_within_3se(z, rng):
    d = pg_draw(np.full(100_000, z), rng)
    se = d.std() / np.sqrt(d.size)
    assert abs(d.mean() - pg_mean(z)) < 3 * se
    assert np.all(d > 0)


def test_pg_variance_at_zero(rng):
    d = pg_draw(np.zeros(200_000), rng)
    assert d.var() == pytest.approx(1.0 / 24.0, rel=0.03)


def test_pg_draw_fast(rng):
    t = time.perf_counter()
    pg_draw(np.zeros(100_000), rng)
    assert time.perf_counter() - t < 10.0


@pytest.mark.parametrize("z", [0.0, 1.0, 3.0])
def test_pg_matches_series_oracle(z, rng):
    exact = pg_draw(np.full(10_000, z), rng)
    series = pg_series_draw(z, 10_000, rng)
    assert ks_2samp(exact, series).statistic < 0.03


def test_symmetry_in_z(rng):
    a = pg_draw(np.full(10_000, 1.5), rng)
    b = pg_draw(np.full(10_000, -1.5), rng)
    assert ks_2samp(a, b).statistic < 0.025


def test_scalar_and_seed():
    a = pg_draw(0.7, np.random.default_rng(1))
    assert isinstance(a, float)
    assert a == pg_draw(0.7, np.random.default_rng(1))


def test_extreme_arguments_stay_finite(rng):
    d = pg_draw(np.array([1e4, -1e4, 500.0, 40.0]), rng)
    assert np.all(np.isfinite(d)) and np.all(d > 0)
    with pytest.raises(ValueError):
        pg_draw(np.array([np.nan]), rng)
