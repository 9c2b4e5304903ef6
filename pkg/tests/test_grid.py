"""Grid construction, stencils, and interpolation."""

import numpy as np
import pytest

from l2flow import DIM, TorusGrid, interpolate


def test_grid_validation():
    with pytest.raises(ValueError):
        TorusGrid(4)
    with pytest.raises(ValueError):
        TorusGrid(12, fd_order=3)
    with pytest.raises(ValueError):
        TorusGrid(12, periods=(1.0, -1.0, 1.0, 1.0))


def test_spacing_and_volume():
    grid = TorusGrid(10, periods=(1.0, 2.0, 2.0, 2.0))
    assert np.allclose(grid.spacing, [0.1, 0.2, 0.2, 0.2])
    assert grid.cell_volume == pytest.approx(0.1 * 0.2**3)
    assert grid.num_points == 10**4


def _mode(grid, k, axis):
    x = grid.coordinates()[..., axis]
    return np.sin(2.0 * np.pi * k * x / grid.periods[axis])


def test_deriv_accuracy_orders():
    """Centered stencils show their nominal convergence order."""
    k, axis = 2, 1
    errs = {}
    for order in (2, 4):
        for n in (12, 24):
            grid = TorusGrid(n, fd_order=order)
            f = _mode(grid, k, axis)
            x = grid.coordinates()[..., axis]
            exact = (2.0 * np.pi * k) * np.cos(2.0 * np.pi * k * x)
            errs[order, n] = np.max(np.abs(grid.deriv(f, axis) - exact))
        ratio = errs[order, 12] / errs[order, 24]
        assert 0.7 * 2**order < ratio < 1.4 * 2**order


def test_deriv_exact_on_linear_mode_content():
    """Derivative of a constant is identically zero."""
    grid = TorusGrid(8)
    f = np.full(grid.shape, 3.7)
    for a in range(DIM):
        assert np.all(grid.deriv(f, a) == 0.0)


def test_gradient_stacks_all_axes():
    grid = TorusGrid(8)
    f = _mode(grid, 1, 0)
    g = grid.gradient(f)
    assert g.shape == grid.shape + (DIM,)
    assert np.allclose(g[..., 0], grid.deriv(f, 0))
    assert np.allclose(g[..., 2], 0.0, atol=1e-12)


def test_wrap_and_min_displacement():
    grid = TorusGrid(8, periods=(1.0, 2.0, 1.0, 1.0))
    x = np.array([1.25, -0.5, 0.0, 0.99])
    w = grid.wrap(x)
    assert np.allclose(w, [0.25, 1.5, 0.0, 0.99])
    d = grid.min_displacement(np.zeros(DIM), np.array([0.9, 1.9, 0.4, 0.5]))
    assert np.allclose(d, [-0.1, -0.1, 0.4, 0.5])


def test_interpolate_reproduces_grid_values():
    grid = TorusGrid(8)
    rng = np.random.default_rng(0)
    f = rng.standard_normal(grid.shape + (3,))
    pts = grid.coordinates()[2, 3, 4, 5]
    got = interpolate(grid, f, pts)
    assert np.allclose(got, f[2, 3, 4, 5])


def test_interpolate_multilinear_exact():
    """Multilinear interpolation is exact on per-axis linear functions."""
    grid = TorusGrid(8)
    x = grid.coordinates()
    # periodic-safe choice: linear within a single cell
    f = 2.0 * x[..., 0] + 3.0 * x[..., 3]
    q = np.array([0.03, 0.0, 0.0, 0.07])   # interior of the first cell
    assert interpolate(grid, f, q) == pytest.approx(2 * 0.03 + 3 * 0.07)


def test_interpolate_periodic_seam():
    grid = TorusGrid(8)
    f = np.cos(2 * np.pi * grid.coordinates()[..., 0])
    h = grid.spacing[0]
    # halfway between the last and first sample, across the seam
    v = interpolate(grid, f, np.array([1.0 - h / 2, 0.0, 0.0, 0.0]))
    expect = 0.5 * (np.cos(2 * np.pi * (1 - h)) + 1.0)
    assert v == pytest.approx(expect)
