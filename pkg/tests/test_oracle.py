"""Internal consistency of the symbolic conformal-metric oracle."""

import numpy as np
import sympy as sp
import pytest

from l2flow import TorusGrid
from l2flow.oracle import (
    conformal_reference,
    coordinate_symbols,
    sine_mode_phi,
)


def test_constant_phi_is_flat():
    grid = TorusGrid(8)
    ref = conformal_reference(grid, sp.Integer(0))
    assert np.max(np.abs(ref["riemann"])) == 0.0
    assert np.max(np.abs(ref["scalar"])) == 0.0


def test_oracle_riemann_symmetries():
    grid = TorusGrid(8)
    ref = conformal_reference(grid, sine_mode_phi(0.05, 1.0))
    rm = ref["riemann"]
    scale = np.max(np.abs(rm))
    assert np.max(np.abs(rm + np.swapaxes(rm, -4, -3))) / scale < 1e-12
    assert np.max(np.abs(rm + np.swapaxes(rm, -2, -1))) / scale < 1e-12
    pair = rm - np.transpose(rm, (0, 1, 2, 3, 6, 7, 4, 5))
    assert np.max(np.abs(pair)) / scale < 1e-12


def test_oracle_scalar_closed_form():
    """For g = e^{2 phi} delta in dimension 4 the scalar curvature is
    R = -6 e^{-2 phi} (laplacian phi + |grad phi|^2), evaluated here by
    an independent symbolic computation."""
    grid = TorusGrid(8)
    eps = 0.04
    phi = sine_mode_phi(eps, 1.0)
    ref = conformal_reference(grid, phi)
    X = coordinate_symbols()
    lap = sum(sp.diff(phi, x, 2) for x in X)
    gradsq = sum(sp.diff(phi, x) ** 2 for x in X)
    closed = sp.lambdify(X, -6 * sp.exp(-2 * phi) * (lap + gradsq), "numpy")
    coords = grid.coordinates()
    expect = np.broadcast_to(
        closed(*(coords[..., a] for a in range(4))), grid.shape
    )
    assert np.allclose(ref["scalar"], expect, rtol=1e-10, atol=1e-12)


def test_oracle_ricci_trace_matches_scalar():
    grid = TorusGrid(8)
    eps = 0.03
    phi = sine_mode_phi(eps, 1.0, axis=2)
    ref = conformal_reference(grid, phi)
    X = coordinate_symbols()
    phi_l = sp.lambdify(X, phi, "numpy")
    coords = grid.coordinates()
    phi_val = np.broadcast_to(
        phi_l(*(coords[..., a] for a in range(4))), grid.shape
    )
    inv_fac = np.exp(-2.0 * phi_val)
    trace = inv_fac * np.einsum("wxyzjj->wxyz", ref["ricci"])
    assert np.allclose(trace, ref["scalar"], rtol=1e-10, atol=1e-12)
