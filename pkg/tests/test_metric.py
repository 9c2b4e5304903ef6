"""Metric field construction, validation, and generators."""

import numpy as np
import pytest

from l2flow import (
    DIM,
    TorusGrid,
    MetricField,
    PositivityError,
    flat_metric,
    anisotropic_flat_metric,
    conformal_mode_metric,
    random_band_limited_metric,
)


def test_shape_and_symmetry_validation():
    grid = TorusGrid(8)
    with pytest.raises(ValueError):
        MetricField(grid, np.zeros(grid.shape + (DIM,)))
    g = flat_metric(grid).g.copy()
    g[0, 0, 0, 0, 0, 1] = 0.1     # asymmetric entry
    with pytest.raises(ValueError, match="symmetric"):
        MetricField(grid, g)


def test_positivity_error_names_the_point():
    grid = TorusGrid(8)
    g = flat_metric(grid).g.copy()
    g[3, 1, 4, 2] = -np.eye(DIM)
    with pytest.raises(PositivityError) as exc:
        MetricField(grid, g)
    assert exc.value.index == (3, 1, 4, 2)


def test_flat_volume_and_inverse():
    grid = TorusGrid(8, periods=(1.0, 2.0, 1.0, 1.0))
    m = flat_metric(grid)
    assert m.volume() == pytest.approx(2.0)
    assert np.allclose(m.inverse, m.g)
    assert np.allclose(m.sqrt_det, 1.0)


def test_scaled_metric():
    grid = TorusGrid(8)
    m = flat_metric(grid).scaled(4.0)
    assert np.allclose(m.g[0, 0, 0, 0], 4.0 * np.eye(DIM))
    # volume scales like c^(n/2)
    assert m.volume() == pytest.approx(16.0)
    with pytest.raises(ValueError):
        m.scaled(-1.0)


def test_anisotropic_flat_is_flat_components():
    grid = TorusGrid(8, periods=(1.0, 2.0, 2.0, 2.0))
    m = anisotropic_flat_metric(grid)
    assert np.allclose(m.g, flat_metric(grid).g)


def test_conformal_mode_metric_shape():
    grid = TorusGrid(8)
    m = conformal_mode_metric(grid, 0.05, axis=1, wavenumber=2)
    # conformally flat: off-diagonal zero, all diagonals equal
    assert np.allclose(m.g[..., 0, 1], 0.0)
    assert np.allclose(m.g[..., 0, 0], m.g[..., 3, 3])
    x = grid.coordinates()[..., 1]
    expect = np.exp(2 * 0.05 * np.sin(2 * np.pi * 2 * x))
    assert np.allclose(m.g[..., 2, 2], expect)


def test_random_band_limited_reproducible():
    grid = TorusGrid(8)
    a = random_band_limited_metric(grid, 0.05, 1, seed=11)
    b = random_band_limited_metric(grid, 0.05, 1, seed=11)
    c = random_band_limited_metric(grid, 0.05, 1, seed=12)
    assert np.array_equal(a.g, b.g)
    assert not np.array_equal(a.g, c.g)
    # sup-normalized perturbation amplitude
    assert np.max(np.abs(a.g - flat_metric(grid).g)) == pytest.approx(0.05)


def test_perturbed():
    grid = TorusGrid(8)
    m = flat_metric(grid)
    h = (random_band_limited_metric(grid, 0.1, 1, seed=0).g - m.g) / 0.1
    p = m.perturbed(h, 0.01)
    assert np.allclose(p.g, m.g + 0.01 * h)
