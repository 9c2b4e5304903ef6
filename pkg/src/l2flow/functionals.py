"""Curvature energies and the analytic flow gradient.

The central functional is

    F(g) = integral |Rm|^2 dV,

and its companion G(g) = integral |Rc - (R/4) g|^2 dV.  On a 4-torus the
generalized Gauss-Bonnet theorem with vanishing Euler characteristic
forces F = 4 G in the continuum, so the residual F - 4 G measures pure
discretization error and is reported alongside the energies.

The L2-gradient of F on a closed 4-manifold is

    (grad F)_ij = s_d * 2 (delta d Rc)_ij + s_0 * (-2 Rch_ij
                  + (1/2) |Rm|^2 g_ij),

with Rch_ij = R_i^pqr R_jpqr, (d Rc)_ijk = nabla_i Rc_jk - nabla_j
Rc_ik, and delta the formal adjoint of d.  Because tensors with an
antisymmetric index pair carry the full (unhalved) component inner
product here, that adjoint is delta T_jk = -2 g^{im} nabla_m T_ijk --
the factor 2 comes from the pair being summed twice.

The two signs s_d, s_0 absorb the remaining orientation conventions of
the discrete operators; they are calibrated once against an
automatic-differentiation gradient of the discretized F (see
discrete_gradient) and frozen in GRAD_SIGN_DELTA / GRAD_SIGN_ZEROTH
below.  A test asserts the calibration stays valid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import DIM
from .metric import MetricField
from .curvature import (
    CurvatureBundle,
    build_curvature,
    covariant_derivative,
    frame_norm_sq,
    orthonormal_coframe,
)

#: frozen sign calibration of the analytic gradient (see module docstring)
GRAD_SIGN_DELTA = 1.0
GRAD_SIGN_ZEROTH = 1.0


@dataclass(frozen=True)
class EnergyReport:
    """Scalar invariants of one metric."""

    F: float
    G: float
    gauss_bonnet_residual: float
    volume: float

    @property
    def ratio(self) -> float:
        """F / (4 G); equals 1 in the continuum limit."""
        return self.F / (4.0 * self.G) if self.G > 0 else float("nan")


@dataclass(frozen=True)
class GradientField:
    """A symmetric 2-tensor field paired with its source metric."""

    metric: MetricField
    tensor: np.ndarray

    def l2_norm_sq(self) -> float:
        """integral |T|_g^2 dV."""
        E = orthonormal_coframe(self.metric)
        nsq = frame_norm_sq(self.tensor, E, 2)
        m = self.metric
        return float(np.sum(nsq * m.sqrt_det) * m.grid.cell_volume)

    def pairing(self, h: np.ndarray) -> float:
        """integral <T, h>_g dV for a symmetric 2-tensor field h."""
        m = self.metric
        ginv = m.inverse
        inner = np.einsum(
            "wxyzia,wxyzjb,wxyzij,wxyzab->wxyz", ginv, ginv, self.tensor, h
        )
        return float(np.sum(inner * m.sqrt_det) * m.grid.cell_volume)


def energy(metric: MetricField, bundle: CurvatureBundle | None = None) -> EnergyReport:
    """F, G, their Gauss-Bonnet residual and the volume of one metric."""
    if bundle is None:
        bundle = build_curvature(metric)
    w = metric.sqrt_det * metric.grid.cell_volume
    F = float(np.sum(bundle.rm_norm_sq * w))
    E = orthonormal_coframe(metric)
    tr_nsq = frame_norm_sq(bundle.traceless_ricci, E, 2)
    G = float(np.sum(tr_nsq * w))
    return EnergyReport(
        F=F,
        G=G,
        gauss_bonnet_residual=F - 4.0 * G,
        volume=float(np.sum(w)),
    )


def _d_ricci(grid, gamma, ricci) -> np.ndarray:
    """(dRc)_ijk = nabla_i Rc_jk - nabla_j Rc_ik (antisymmetric in ij)."""
    nr = covariant_derivative(grid, gamma, ricci, 2)
    return nr - np.swapaxes(nr, -3, -2)


def _delta_first_slot(grid, gamma, ginv, T3) -> np.ndarray:
    """(delta T)_jk = -2 g^{im} nabla_m T_{ijk} for a pair-antisymmetric
    3-tensor field (adjoint of _d_ricci, see module docstring)."""
    nT = covariant_derivative(grid, gamma, T3, 3)
    # nT axes: grid + (m, i, j, k)
    return -2.0 * np.einsum("wxyzim,wxyzmijk->wxyzjk", ginv, nT)


def grad_F_analytic(
    metric: MetricField, bundle: CurvatureBundle | None = None
) -> GradientField:
    """L2-gradient of F from the pointwise curvature formula."""
    if bundle is None:
        bundle = build_curvature(metric)
    grid = metric.grid
    gamma = bundle.christoffel
    ginv = metric.inverse
    drc = _d_ricci(grid, gamma, bundle.ricci)
    ddrc = _delta_first_slot(grid, gamma, ginv, drc)
    ddrc = 0.5 * (ddrc + np.swapaxes(ddrc, -1, -2))
    zeroth = (
        -2.0 * bundle.check_tensor
        + 0.5 * bundle.rm_norm_sq[..., None, None] * metric.g
    )
    tensor = GRAD_SIGN_DELTA * 2.0 * ddrc + GRAD_SIGN_ZEROTH * zeroth
    return GradientField(metric=metric, tensor=tensor)
