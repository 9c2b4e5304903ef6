"""Metric fields on the periodic grid and the initial-data generators."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import DIM, TorusGrid


class PositivityError(ValueError):
    """Raised when a metric loses positive definiteness at a grid point."""

    def __init__(self, index):
        self.index = tuple(int(i) for i in index)
        super().__init__(
            f"metric is not positive definite at grid index {self.index}"
        )


@dataclass(frozen=True)
class MetricField:
    """Symmetric positive-definite 4x4 metric components g_ij(x).

    ``g`` has shape grid.shape + (4, 4) and is exactly symmetric.
    Positive definiteness is established by a Cholesky factorization at
    every grid point on construction.
    """

    grid: TorusGrid
    g: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.g, dtype=float)
        if g.shape != self.grid.shape + (DIM, DIM):
            raise ValueError(f"metric array has wrong shape {g.shape}")
        if not np.array_equal(g, np.swapaxes(g, -1, -2)):
            raise ValueError("metric components are not symmetric")
        object.__setattr__(self, "g", g)
        self.validate()

    def validate(self):
        """Cholesky check at every point; names the first bad index."""
        flat = self.g.reshape(-1, DIM, DIM)
        try:
            np.linalg.cholesky(flat)
        except np.linalg.LinAlgError:
            for p in range(flat.shape[0]):
                try:
                    np.linalg.cholesky(flat[p])
                except np.linalg.LinAlgError:
                    raise PositivityError(
                        np.unravel_index(p, self.grid.shape)
                    ) from None
            raise

    @property
    def inverse(self) -> np.ndarray:
        return np.linalg.inv(self.g)

    @property
    def det(self) -> np.ndarray:
        return np.linalg.det(self.g)

    @property
    def sqrt_det(self) -> np.ndarray:
        return np.sqrt(self.det)

    def volume(self) -> float:
        """Total Riemannian volume, quadrature weight sqrt(det g) * prod h."""
        return float(np.sum(self.sqrt_det) * self.grid.cell_volume)

    def scaled(self, c: float) -> "MetricField":
        """Constant conformal scaling c * g."""
        if c <= 0:
            raise ValueError("scale factor must be positive")
        return MetricField(self.grid, c * self.g)

    def perturbed(self, h: np.ndarray, eps: float) -> "MetricField":
        """g + eps * h for a symmetric perturbation field h."""
        return MetricField(self.grid, self.g + eps * h)


def flat_metric(grid: TorusGrid) -> MetricField:
    """The flat product metric delta_ij."""
    g = np.zeros(grid.shape + (DIM, DIM))
    for a in range(DIM):
        g[..., a, a] = 1.0
    return MetricField(grid, g)


def anisotropic_flat_metric(grid: TorusGrid) -> MetricField:
    """Flat delta metric; anisotropy lives in the grid periods."""
    return flat_metric(grid)


def conformal_mode_metric(
    grid: TorusGrid, eps: float, axis: int = 0, wavenumber: int = 1
) -> MetricField:
    """g = exp(2 * eps * sin(2 pi k x^axis / L)) * delta."""
    x = grid.coordinates()[..., axis]
    L = grid.periods[axis]
    phi = eps * np.sin(2.0 * np.pi * wavenumber * x / L)
    factor = np.exp(2.0 * phi)
    g = np.zeros(grid.shape + (DIM, DIM))
    for a in range(DIM):
        g[..., a, a] = factor
    return MetricField(grid, g)


def random_band_limited_metric(
    grid: TorusGrid, eps: float, max_wavenumber: int = 1, seed: int = 0
) -> MetricField:
    """Seeded band-limited symmetric perturbation of the flat metric.

    g = delta + eps * h where each independent component of h is a sum of
    real Fourier modes with per-axis wavenumbers up to ``max_wavenumber``,
    normalized to sup-norm one.  Same seed, same grid -> bitwise identical
    output.
    """
    rng = np.random.default_rng(seed)
    x = grid.coordinates()
    L = np.asarray(grid.periods)
    modes = []
    kr = range(-max_wavenumber, max_wavenumber + 1)
    for k1 in kr:
        for k2 in kr:
            for k3 in kr:
                for k4 in kr:
                    if (k1, k2, k3, k4) != (0, 0, 0, 0):
                        modes.append((k1, k2, k3, k4))
    phase_arg = np.tensordot(x / L, np.asarray(modes, dtype=float).T, axes=1)
    h = np.zeros(grid.shape + (DIM, DIM))
    for i in range(DIM):
        for j in range(i, DIM):
            amp = rng.standard_normal(len(modes))
            pha = rng.uniform(0.0, 2.0 * np.pi, len(modes))
            comp = np.sum(
                amp * np.cos(2.0 * np.pi * phase_arg + pha), axis=-1
            )
            comp /= max(np.max(np.abs(comp)), 1e-300)
            h[..., i, j] = comp
            h[..., j, i] = comp
    return MetricField(grid, flat_metric(grid).g + eps * h)


def random_symmetric_field(grid: TorusGrid, seed: int, max_wavenumber: int = 1) -> np.ndarray:
    """Smooth band-limited symmetric 2-tensor field, for probe directions."""
    m = random_band_limited_metric(grid, 1.0e-3, max_wavenumber, seed)
    return (m.g - flat_metric(grid).g) / 1.0e-3
