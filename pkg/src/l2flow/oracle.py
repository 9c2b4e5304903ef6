"""Exact-calculus curvature oracle for conformally flat metrics.

For metrics of the form g = exp(2 * phi(x)) * delta with phi given as a
closed-form expression, the Christoffel symbols and the lowered Riemann
tensor are computed *symbolically* (sympy does the differentiation) and
then evaluated pointwise on the grid.  No finite differences are
involved anywhere, so the result is an independent reference against
which the discretized curvature can be checked.

The index convention matches the rest of the package:

    R^l_ijk = d_i Gamma^l_jk - d_j Gamma^l_ik
              + Gamma^p_jk Gamma^l_ip - Gamma^p_ik Gamma^l_jp
    R_ijkl  = R^m_ijk g_ml,   Rc_jk = g^il R_ijkl.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
import sympy as sp

from .grid import DIM, TorusGrid

_X = sp.symbols("x0 x1 x2 x3", real=True)


@lru_cache(maxsize=8)
def _conformal_symbols(phi_key):
    """Symbolic Gamma, Riemann, Ricci, scalar for g = e^{2 phi} delta.

    ``phi_key`` is a sympy expression in _X (hashable, hence cacheable).
    Returns lambdified callables taking four coordinate arrays.
    """
    phi = sp.sympify(phi_key)
    ef = sp.exp(2 * phi)
    g = sp.eye(DIM) * ef
    ginv = sp.eye(DIM) / ef

    dphi = [sp.diff(phi, _X[a]) for a in range(DIM)]
    gamma = [[[None] * DIM for _ in range(DIM)] for _ in range(DIM)]
    for k in range(DIM):
        for i in range(DIM):
            for j in range(DIM):
                # Gamma^k_ij = d_i phi delta_jk + d_j phi delta_ik
                #              - d_k phi delta_ij   (conformally flat)
                expr = 0
                if j == k:
                    expr += dphi[i]
                if i == k:
                    expr += dphi[j]
                if i == j:
                    expr -= dphi[k]
                gamma[k][i][j] = sp.simplify(expr)

    rm = np.empty((DIM,) * 4, dtype=object)
    for i in range(DIM):
        for j in range(DIM):
            for k in range(DIM):
                for l in range(DIM):
                    r_up = sp.diff(gamma[l][j][k], _X[i]) - sp.diff(
                        gamma[l][i][k], _X[j]
                    )
                    for p in range(DIM):
                        r_up += (
                            gamma[p][j][k] * gamma[l][i][p]
                            - gamma[p][i][k] * gamma[l][j][p]
                        )
                    rm[i, j, k, l] = sp.simplify(r_up * g[l, l])

    ric = np.empty((DIM, DIM), dtype=object)
    for j in range(DIM):
        for k in range(DIM):
            ric[j, k] = sp.simplify(
                sum(ginv[i, i] * rm[i, j, k, i] for i in range(DIM))
            )
    scal = sp.simplify(sum(ginv[j, j] * ric[j, j] for j in range(DIM)))

    def lam(e):
        return sp.lambdify(_X, e, modules="numpy")

    gamma_f = [[[lam(gamma[k][i][j]) for j in range(DIM)] for i in range(DIM)]
               for k in range(DIM)]
    rm_f = [[[[lam(rm[i, j, k, l]) for l in range(DIM)] for k in range(DIM)]
             for j in range(DIM)] for i in range(DIM)]
    ric_f = [[lam(ric[j, k]) for k in range(DIM)] for j in range(DIM)]
    scal_f = lam(scal)
    return gamma_f, rm_f, ric_f, scal_f


def _eval_grid(fun, coords):
    xs = [coords[..., a] for a in range(DIM)]
    val = fun(*xs)
    return np.broadcast_to(np.asarray(val, dtype=float), coords.shape[:-1])


def conformal_reference(grid: TorusGrid, phi_expr) -> dict:
    """Exact curvature fields of g = e^{2 phi} delta evaluated on a grid.

    ``phi_expr`` is a sympy expression in the symbols returned by
    :func:`coordinate_symbols`.  Returns arrays keyed by ``"christoffel"``
    (grid + (k,i,j)), ``"riemann"`` (grid + (i,j,k,l)), ``"ricci"``,
    ``"scalar"`` and ``"rm_norm_sq"``.
    """
    gamma_f, rm_f, ric_f, scal_f = _conformal_symbols(sp.sympify(phi_expr))
    coords = grid.coordinates()
    gamma = np.zeros(grid.shape + (DIM, DIM, DIM))
    for k in range(DIM):
        for i in range(DIM):
            for j in range(DIM):
                gamma[..., k, i, j] = _eval_grid(gamma_f[k][i][j], coords)
    rm = np.zeros(grid.shape + (DIM,) * 4)
    for i in range(DIM):
        for j in range(DIM):
            for k in range(DIM):
                for l in range(DIM):
                    rm[..., i, j, k, l] = _eval_grid(rm_f[i][j][k][l], coords)
    ric = np.zeros(grid.shape + (DIM, DIM))
    for j in range(DIM):
        for k in range(DIM):
            ric[..., j, k] = _eval_grid(ric_f[j][k], coords)
    scal = _eval_grid(scal_f, coords)

    # |Rm|^2 with the exact inverse metric e^{-2 phi} delta
    phi_l = sp.lambdify(_X, sp.sympify(phi_expr), modules="numpy")
    phi_val = _eval_grid(phi_l, coords)
    inv_fac = np.exp(-2.0 * phi_val)
    rm_norm_sq = inv_fac**4 * np.sum(rm * rm, axis=(-4, -3, -2, -1))
    return {
        "christoffel": gamma,
        "riemann": rm,
        "ricci": ric,
        "scalar": scal,
        "rm_norm_sq": rm_norm_sq,
    }


def coordinate_symbols():
    """The four sympy coordinate symbols used by the oracle."""
    return _X


def sine_mode_phi(eps: float, period: float, axis: int = 0, wavenumber: int = 1):
    """phi = eps * sin(2 pi k x^axis / L), matching conformal_mode_metric."""
    return eps * sp.sin(2 * sp.pi * wavenumber * _X[axis] / period)
