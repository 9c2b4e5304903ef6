"""Quasi-geodesic families along a flow trace."""

import numpy as np
import pytest

from l2flow import TorusGrid, flat_metric, random_band_limited_metric
from l2flow import flow
from l2flow import geometry as geo


@pytest.fixture(scope="module")
def flat_trace():
    grid = TorusGrid(8)
    return flow.run(flat_metric(grid), t_final=1e-6, dt=2e-7,
                    snapshot_every=1, deriv_norms=False)


def test_measure_A_flat(flat_trace):
    assert geo.measure_A(flat_trace, 0.0, 1e-6) == 0.0


def test_select_S_static_flow():
    # zero evolution rate: any freeze interval works, capped at the span
    assert geo.select_S(0.0, 0.05, 0.5, 0.0, 1e-6, 0.5) == 1e-6


def test_select_S_monotone_in_A():
    s_lo = geo.select_S(10.0, 0.05, 0.5, 0.0, 1e-4, 0.5)
    s_hi = geo.select_S(1000.0, 0.05, 0.5, 0.0, 1e-4, 0.5)
    assert 0.0 < s_hi < s_lo


def test_flat_family_single_segment(flat_trace):
    x = np.zeros(4)
    y = np.array([0.5, 0.0, 0.0, 0.0])
    fam = geo.quasi_geodesic(flat_trace, x, y, beta=0.05)
    assert len(fam.segments) == 1
    assert fam.A == 0.0
    marg = geo.quasi_geodesic_margins(fam, flat_trace, num_times=5)
    assert min(marg.values()) >= -1e-9


def test_backward_direction(flat_trace):
    x = np.zeros(4)
    y = np.array([0.0, 0.5, 0.0, 0.0])
    fam = geo.quasi_geodesic(flat_trace, x, y, direction="backward")
    marg = geo.quasi_geodesic_margins(fam, flat_trace, num_times=5)
    assert min(marg.values()) >= -1e-9


def test_bad_direction(flat_trace):
    with pytest.raises(ValueError, match="direction"):
        geo.quasi_geodesic(flat_trace, np.zeros(4), np.ones(4) * 0.5,
                           direction="sideways")


def test_coincident_endpoints_rejected(flat_trace):
    with pytest.raises(ValueError, match="coincide"):
        geo.quasi_geodesic(flat_trace, np.ones(4) * 0.25, np.ones(4) * 0.25)


def test_stiff_trace_rejected():
    """A coarse snapshot schedule cannot resolve the required S on a
    fast-moving metric: the constructor must refuse, not silently build
    an invalid family."""
    grid = TorusGrid(8)
    m = random_band_limited_metric(grid, 0.05, 1, seed=0)
    tr = flow.run(m, t_final=2e-6, dt=4e-7, snapshot_every=5,
                  deriv_norms=False)
    with pytest.raises(ValueError, match="resolution"):
        geo.quasi_geodesic(tr, np.zeros(4), np.ones(4) * 0.5)
