"""Numerical laboratory for the L2-curvature gradient flow on periodic 4-tori."""

from .grid import DIM, TorusGrid, interpolate
from .metric import (
    MetricField,
    PositivityError,
    anisotropic_flat_metric,
    conformal_mode_metric,
    flat_metric,
    random_band_limited_metric,
)
from .curvature import (
    CurvatureBundle,
    build_curvature,
    deriv_sup_norms,
    fk_scaling_check,
    lp_norm,
    sup_norm,
)

__all__ = [
    "DIM",
    "TorusGrid",
    "interpolate",
    "MetricField",
    "PositivityError",
    "anisotropic_flat_metric",
    "conformal_mode_metric",
    "flat_metric",
    "random_band_limited_metric",
    "CurvatureBundle",
    "build_curvature",
    "deriv_sup_norms",
    "fk_scaling_check",
    "lp_norm",
    "sup_norm",
]
