"""Curvature tensors against the exact symbolic oracle and identities."""

import numpy as np
import pytest

from l2flow import (
    DIM,
    TorusGrid,
    MetricField,
    flat_metric,
    conformal_mode_metric,
    random_band_limited_metric,
    build_curvature,
)
from l2flow.curvature import (
    christoffel,
    covariant_derivative,
    frame_norm_sq,
    orthonormal_coframe,
    to_frame,
    deriv_sup_norms,
    lp_norm,
    sup_norm,
)
from l2flow.oracle import conformal_reference, sine_mode_phi


def _rel_err(a, b):
    return np.sqrt(np.sum((a - b) ** 2)) / max(np.sqrt(np.sum(b**2)), 1e-300)


def test_flat_curvature_vanishes():
    bundle = build_curvature(flat_metric(TorusGrid(8)), 1)
    assert sup_norm(bundle.rm_norm_sq) == 0.0
    assert sup_norm(bundle.scalar) == 0.0
    assert sup_norm(bundle.nabla_rm_norm_sq[1]) == 0.0


def test_christoffel_against_oracle():
    grid = TorusGrid(12)
    eps = 0.01
    m = conformal_mode_metric(grid, eps)
    ref = conformal_reference(grid, sine_mode_phi(eps, 1.0))
    gamma = christoffel(m)
    assert _rel_err(gamma, ref["christoffel"]) < 5e-3


def test_riemann_and_ricci_against_oracle():
    grid = TorusGrid(12)
    eps = 0.01
    m = conformal_mode_metric(grid, eps)
    ref = conformal_reference(grid, sine_mode_phi(eps, 1.0))
    b = build_curvature(m)
    assert _rel_err(b.riemann, ref["riemann"]) < 6e-3
    assert _rel_err(b.ricci, ref["ricci"]) < 6e-3
    assert _rel_err(b.scalar, ref["scalar"]) < 6e-3
    assert _rel_err(b.rm_norm_sq, ref["rm_norm_sq"]) < 2e-2


def test_riemann_oracle_convergence_rate():
    """Fourth-order stencils converge at fourth order against the oracle."""
    eps = 0.01
    errs = {}
    for n in (12, 24):
        grid = TorusGrid(n, fd_order=4)
        m = conformal_mode_metric(grid, eps)
        ref = conformal_reference(grid, sine_mode_phi(eps, 1.0))
        errs[n] = _rel_err(build_curvature(m).riemann, ref["riemann"])
    # 2x refinement: expect ~16x drop for order 4
    assert errs[12] / errs[24] > 8.0


def test_riemann_symmetries_and_bianchi():
    """Antisymmetry, pair symmetry, and first Bianchi, relative 1e-9."""
    grid = TorusGrid(12)
    for m in (
        conformal_mode_metric(grid, 0.05),
        random_band_limited_metric(grid, 0.05, 1, seed=3),
    ):
        rm = build_curvature(m).riemann
        scale = max(np.max(np.abs(rm)), 1e-300)
        asym_ij = rm + np.swapaxes(rm, -4, -3)
        asym_kl = rm + np.swapaxes(rm, -2, -1)
        pair = rm - np.transpose(rm, (0, 1, 2, 3, 6, 7, 4, 5))
        bianchi = (
            rm
            + np.transpose(rm, (0, 1, 2, 3, 5, 6, 4, 7))
            + np.transpose(rm, (0, 1, 2, 3, 6, 4, 5, 7))
        )
        for viol in (asym_ij, asym_kl, pair, bianchi):
            assert np.max(np.abs(viol)) / scale < 1e-9


def test_ricci_sign_convention():
    """Ricci of a weakly conformal metric matches the oracle's sign."""
    grid = TorusGrid(12)
    m = conformal_mode_metric(grid, 0.02)
    ref = conformal_reference(grid, sine_mode_phi(0.02, 1.0))
    b = build_curvature(m)
    # correlation, not just magnitude
    corr = np.sum(b.ricci * ref["ricci"]) / np.sqrt(
        np.sum(b.ricci**2) * np.sum(ref["ricci"] ** 2)
    )
    assert corr > 0.999


def test_metric_compatibility():
    """The covariant derivative of g itself vanishes."""
    grid = TorusGrid(12)
    m = random_band_limited_metric(grid, 0.05, 1, seed=1)
    gamma = christoffel(m)
    nabla_g = covariant_derivative(grid, gamma, m.g, 2)
    dscale = max(np.max(np.abs(grid.gradient(m.g))), 1e-300)
    # residual is pure stencil truncation error, far below the raw
    # derivative magnitude
    assert np.max(np.abs(nabla_g)) / dscale < 2e-3


def test_frame_norms_match_direct_contraction():
    grid = TorusGrid(8)
    m = random_band_limited_metric(grid, 0.05, 1, seed=2)
    E = orthonormal_coframe(m)
    # E^T g E = identity
    eye = np.einsum("wxyzia,wxyzij,wxyzjb->wxyzab", E, m.g, E)
    assert np.allclose(eye, np.broadcast_to(np.eye(DIM), eye.shape), atol=1e-12)
    T = np.random.default_rng(0).standard_normal(grid.shape + (DIM, DIM))
    direct = np.einsum(
        "wxyzia,wxyzjb,wxyzij,wxyzab->wxyz", m.inverse, m.inverse, T, T
    )
    assert np.allclose(frame_norm_sq(T, E, 2), direct, rtol=1e-10, atol=1e-12)


def test_to_frame_rank_preserved():
    grid = TorusGrid(8)
    m = flat_metric(grid)
    E = orthonormal_coframe(m)
    T = np.random.default_rng(1).standard_normal(grid.shape + (DIM,) * 3)
    assert np.allclose(to_frame(T, E, 3), T)


def test_deriv_sup_norms_consistent_with_bundle():
    grid = TorusGrid(8)
    m = random_band_limited_metric(grid, 0.05, 1, seed=0)
    b = build_curvature(m, 2)
    out = deriv_sup_norms(m, max_order=2)
    for k in range(3):
        assert out[k] == pytest.approx(
            float(np.sqrt(np.max(b.nabla_rm_norm_sq[k])))
        )


def test_lp_norm_flat():
    grid = TorusGrid(8)
    m = flat_metric(grid)
    f = np.full(grid.shape, 2.0)
    assert lp_norm(f, 2, m) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        lp_norm(f, 0.5, m)
