"""Distances, geodesics, balls, and the injectivity-radius estimator."""

import numpy as np
import pytest

from l2flow import (
    TorusGrid,
    flat_metric,
    anisotropic_flat_metric,
    conformal_mode_metric,
)
from l2flow import geometry as geo


@pytest.fixture(scope="module")
def grid():
    return TorusGrid(12)


@pytest.fixture(scope="module")
def flat(grid):
    return flat_metric(grid)


def test_chord_curve_length(grid, flat):
    c = geo.chord_curve(grid, np.zeros(4), np.array([0.3, 0.0, 0.0, 0.0]))
    assert c.length(flat) == pytest.approx(0.3)
    sp = c.speeds(flat)
    assert np.allclose(sp, 0.3)
    assert c.acceleration_sup(flat) == pytest.approx(0.0, abs=1e-10)


def test_flat_distance_half_period(grid, flat):
    d = geo.distance(flat, np.zeros(4), np.array([0.5, 0, 0, 0]),
                     use_graph=False)
    assert d == pytest.approx(0.5, rel=1e-3)


def test_distance_wraps_around(grid, flat):
    d = geo.distance(flat, np.array([0.1, 0, 0, 0]),
                     np.array([0.9, 0, 0, 0]), use_graph=False)
    assert d == pytest.approx(0.2, rel=1e-2)


def test_distance_coincident_points(flat):
    assert geo.distance(flat, np.ones(4) * 0.25, np.ones(4) * 0.25) == 0.0


def test_geodesic_certified_on_flat(grid, flat):
    c = geo.geodesic(flat, np.zeros(4), np.array([0.5, 0.5, 0, 0]),
                     use_graph=False)
    assert c.certified
    assert c.length(flat) == pytest.approx(np.sqrt(0.5), rel=1e-3)


def test_graph_initialization_route(grid, flat):
    d = geo.distance(flat, np.zeros(4), np.array([0.25, 0.25, 0, 0]),
                     use_graph=True)
    assert d == pytest.approx(np.sqrt(2) * 0.25, rel=1e-2)


def test_anisotropic_distances():
    grid = TorusGrid(8, periods=(1.0, 2.0, 2.0, 2.0))
    m = anisotropic_flat_metric(grid)
    d = geo.distance(m, np.zeros(4), np.array([0.0, 1.0, 0.0, 0.0]),
                     use_graph=False)
    expect = np.sqrt(float(m.g[0, 0, 0, 0, 1, 1]))  # constant metric chord
    assert d == pytest.approx(expect, rel=1e-2)


def test_conformal_distance_perturbation(grid):
    eps = 0.05
    m = conformal_mode_metric(grid, eps)
    d = geo.distance(m, np.zeros(4), np.array([0.5, 0, 0, 0]),
                     use_graph=False)
    assert abs(d - 0.5) <= 3.0 * eps * 0.5


def test_metric_axioms_on_sample(grid, flat):
    pts = geo.default_sample_set(grid)[:6]
    D = geo.all_pairs_distances(flat, pts)
    assert np.array_equal(D, D.T)
    assert np.all(np.diag(D) == 0.0)
    n = len(pts)
    for i in range(n):
        for j in range(n):
            for k in range(n):
                assert D[i, j] <= D[i, k] + D[k, j] + 1e-9


def test_default_sample_set(grid):
    pts = geo.default_sample_set(grid)
    assert pts.shape == (16, 4)
    assert set(np.unique(pts)) == {0.0, 0.5}


def test_diameter_flat(grid, flat):
    assert geo.diameter(flat) == pytest.approx(1.0, rel=1e-2)


def test_ball_volume_flat(grid, flat):
    r = 0.3
    vol = geo.ball_volume(flat, np.ones(4) * 0.5, r)
    expect = np.pi**2 / 2.0 * r**4
    assert vol == pytest.approx(expect, rel=0.05)


def test_noncollapsing_flat(grid, flat):
    margin = geo.noncollapsing_check(flat, 0.9, (0.1, 0.25))
    assert margin > 0.0


def test_inj_estimate_flat(grid, flat):
    inj, flagged = geo.inj_estimate(flat)
    assert inj == pytest.approx(0.5, rel=1e-6)
    assert not flagged  # zero curvature: the heuristic is trustworthy


def test_gamma_norm_flat_and_conformal(grid, flat):
    p = np.ones(4) * 0.5
    assert geo.gamma_norm(flat, p) <= 1e-8
    eps = 0.05
    m = conformal_mode_metric(grid, eps)
    val = geo.gamma_norm(m, p, probe=np.array([0.1, 0.0, 0.0, 0.0]))
    assert 0.0 < val <= 10.0 * eps
