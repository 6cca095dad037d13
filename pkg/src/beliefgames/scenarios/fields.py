"""Planar scalar fields sampled on regular grids with bilinear queries."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..exceptions import DimensionMismatchError

# Rasterized noise multipliers never drop below this fraction of the base
# level, keeping every observation-noise scale strictly positive.
MIN_SCALE_FRACTION = 0.01


@dataclass(frozen=True)
class NoiseField:
    """Positive noise-scale multipliers on a regular grid.

    values[iy, ix] is the multiplier at node (origin + ix * cell,
    origin_y + iy * cell).  Queries clamp to the grid box and interpolate
    bilinearly, so results are continuous and stay within the grid's range.
    """

    origin: np.ndarray
    cell: float
    values: np.ndarray

    def __post_init__(self):
        origin = np.asarray(self.origin, dtype=float).reshape(2)
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or values.shape[0] < 2 or values.shape[1] < 2:
            raise DimensionMismatchError("field grid needs at least 2x2 nodes")
        if self.cell <= 0:
            raise DimensionMismatchError("cell size must be positive")
        if np.any(values <= 0):
            raise DimensionMismatchError("noise scale factors must be strictly positive")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "values", values)

    def query(self, p: np.ndarray) -> np.ndarray:
        """Bilinear multipliers at points p of shape (..., 2)."""
        return bilinear(self.values, self.origin, self.cell, p)


def bilinear(values: np.ndarray, origin: np.ndarray, cell: float, p: np.ndarray) -> np.ndarray:
    """Bilinear interpolation with clamping to the grid box."""
    p = np.asarray(p, dtype=float)
    ny, nx = values.shape
    gx = np.clip((p[..., 0] - origin[0]) / cell, 0.0, nx - 1.0)
    gy = np.clip((p[..., 1] - origin[1]) / cell, 0.0, ny - 1.0)
    ix = np.minimum(gx.astype(int), nx - 2)
    iy = np.minimum(gy.astype(int), ny - 2)
    fx = gx - ix
    fy = gy - iy
    v00 = values[iy, ix]
    v01 = values[iy, ix + 1]
    v10 = values[iy + 1, ix]
    v11 = values[iy + 1, ix + 1]
    return (
        v00 * (1 - fx) * (1 - fy)
        + v01 * fx * (1 - fy)
        + v10 * (1 - fx) * fy
        + v11 * fx * fy
    )


def rasterize_zones(
    bounds: tuple[float, float, float, float],
    cell: float,
    base: float,
    zones: list[dict],
) -> NoiseField:
    """Rasterize smooth radial low-noise bumps onto a grid.

    bounds is (x_min, x_max, y_min, y_max).  Each zone dict has center,
    radius, and scale (the multiplier approached at the zone center).  Bumps
    are Gaussian with sigma = radius / 2 so differentiating through the field
    stays well behaved; overlapping zones are clamped at a positive floor.
    """
    x_min, x_max, y_min, y_max = bounds
    if base <= 0:
        raise DimensionMismatchError("base noise scale must be positive")
    nx = max(2, int(np.ceil((x_max - x_min) / cell)) + 1)
    ny = max(2, int(np.ceil((y_max - y_min) / cell)) + 1)
    xs = x_min + cell * np.arange(nx)
    ys = y_min + cell * np.arange(ny)
    X, Y = np.meshgrid(xs, ys)
    values = np.full((ny, nx), float(base))
    for z in zones:
        cx, cy = float(z["center"][0]), float(z["center"][1])
        radius = float(z["radius"])
        scale = float(z["scale"])
        if radius <= 0 or scale <= 0:
            raise DimensionMismatchError("zone radius and scale must be positive")
        sigma = radius / 2.0
        bump = np.exp(-((X - cx) ** 2 + (Y - cy) ** 2) / (2.0 * sigma**2))
        values -= (base - scale) * bump
    values = np.maximum(values, MIN_SCALE_FRACTION * base)
    return NoiseField(origin=np.array([x_min, y_min]), cell=float(cell), values=values)
