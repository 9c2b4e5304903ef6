"""Scale-weighted curvature magnitudes f_k and their exact scaling law."""

import numpy as np
import pytest

from l2flow import (
    TorusGrid,
    conformal_mode_metric,
    random_band_limited_metric,
    build_curvature,
    fk_scaling_check,
)


def test_fk_ladder_monotone():
    grid = TorusGrid(8)
    m = random_band_limited_metric(grid, 0.05, 1, seed=0)
    b = build_curvature(m, 3)
    assert set(b.fk) == {0, 1, 2, 3}
    for k in (1, 2, 3):
        assert np.all(b.fk[k] >= b.fk[k - 1])


def test_fk_scaling_identity():
    """f_k(c g) = c^{-1} f_k(g) pointwise, exactly up to roundoff."""
    grid = TorusGrid(8)
    m = random_band_limited_metric(grid, 0.05, 1, seed=1)
    for k in (0, 1, 2):
        for c in (0.5, 3.7):
            assert fk_scaling_check(m, k, c) <= 1e-10


def test_fk_scaling_rejects_bad_scale():
    grid = TorusGrid(8)
    m = conformal_mode_metric(grid, 0.02)
    with pytest.raises(ValueError):
        fk_scaling_check(m, 0, -1.0)


def test_bad_derivative_order():
    grid = TorusGrid(8)
    m = conformal_mode_metric(grid, 0.02)
    with pytest.raises(ValueError):
        build_curvature(m, 4)
