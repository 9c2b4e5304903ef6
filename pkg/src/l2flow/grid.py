"""Periodic 4-torus grids and finite-difference calculus.

The computational domain is always the flat coordinate torus
[0, L1) x [0, L2) x [0, L3) x [0, L4) sampled on a uniform N^4 lattice.
All index arithmetic wraps modulo N on every axis.  Derivative stencils
are centered differences of uniform order (2 or 4) implemented with
``np.roll``, so every operator is exactly periodic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DIM = 4

#: stencil half-widths per supported order
_STENCIL_WIDTH = {2: 1, 4: 2}


@dataclass(frozen=True)
class TorusGrid:
    """Uniform periodic grid on the 4-torus.

    Attributes
    ----------
    n : points per axis (same for all four axes), n >= 8
    periods : coordinate period L[a] per axis, a = 0..3
    fd_order : order of the centered difference stencils (2 or 4)
    """

    n: int
    periods: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)
    fd_order: int = 4

    def __post_init__(self):
        if self.n < 8:
            raise ValueError(f"grid needs n >= 8, got n={self.n}")
        if self.fd_order not in _STENCIL_WIDTH:
            raise ValueError(f"unsupported stencil order {self.fd_order}")
        if 2 * _STENCIL_WIDTH[self.fd_order] + 1 > self.n:
            raise ValueError("grid too small for the stencil width")
        if any(L <= 0 for L in self.periods):
            raise ValueError("periods must be positive")
        object.__setattr__(self, "periods", tuple(float(L) for L in self.periods))

    @property
    def spacing(self) -> np.ndarray:
        """Grid spacing h[a] = L[a] / n."""
        return np.asarray(self.periods) / self.n

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return (self.n,) * DIM

    @property
    def num_points(self) -> int:
        return self.n ** DIM

    @property
    def cell_volume(self) -> float:
        """Coordinate volume of one grid cell, prod_a h[a]."""
        return float(np.prod(self.spacing))

    def coordinates(self) -> np.ndarray:
        """Vertex coordinates, shape (n, n, n, n, 4)."""
        axes = [np.arange(self.n) * h for h in self.spacing]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack(mesh, axis=-1)

    def axis_coordinate(self, axis: int) -> np.ndarray:
        """1-d coordinate array along one axis."""
        return np.arange(self.n) * self.spacing[axis]

    def deriv(self, f: np.ndarray, axis: int) -> np.ndarray:
        """Partial derivative along a grid axis.

        ``f`` has the grid on its first four axes; trailing axes are
        tensor components and are differentiated elementwise.
        """
        h = self.spacing[axis]
        if self.fd_order == 2:
            return (np.roll(f, -1, axis=axis) - np.roll(f, 1, axis=axis)) / (2.0 * h)
        return (
            8.0 * (np.roll(f, -1, axis=axis) - np.roll(f, 1, axis=axis))
            - (np.roll(f, -2, axis=axis) - np.roll(f, 2, axis=axis))
        ) / (12.0 * h)

    def gradient(self, f: np.ndarray) -> np.ndarray:
        """All four partials; the derivative index is appended last."""
        return np.stack([self.deriv(f, a) for a in range(DIM)], axis=-1)

    def wrap(self, x: np.ndarray) -> np.ndarray:
        """Wrap continuous coordinates into the fundamental domain."""
        return np.mod(x, np.asarray(self.periods))

    def min_displacement(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Shortest coordinate displacement y - x modulo the periods."""
        L = np.asarray(self.periods)
        d = np.mod(np.asarray(y) - np.asarray(x), L)
        return np.where(d > L / 2.0, d - L, d)

    def index_coords(self, idx) -> np.ndarray:
        """Coordinates of a grid multi-index."""
        return np.asarray(idx) * self.spacing


def interpolate(grid: TorusGrid, f: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Periodic multilinear interpolation of a grid field.

    ``f`` has shape grid.shape + comp_shape; ``x`` has shape (..., 4) in
    continuous coordinates.  Returns shape x.shape[:-1] + comp_shape.
    """
    x = np.asarray(x, dtype=float)
    h = grid.spacing
    u = x / h
    i0 = np.floor(u).astype(np.int64)
    w = u - i0
    comp_shape = f.shape[DIM:]
    out_shape = x.shape[:-1] + comp_shape
    out = np.zeros(out_shape)
    for corner in range(16):
        bits = [(corner >> a) & 1 for a in range(DIM)]
        idx = tuple(
            np.mod(i0[..., a] + bits[a], grid.n) for a in range(DIM)
        )
        weight = np.ones(x.shape[:-1])
        for a in range(DIM):
            wa = w[..., a]
            weight = weight * (wa if bits[a] else 1.0 - wa)
        out += weight.reshape(weight.shape + (1,) * len(comp_shape)) * f[idx]
    return out
