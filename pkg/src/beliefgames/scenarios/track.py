"""Closed race tracks: distance-to-centerline and arc-length progress fields.

Both fields are precomputed on a regular grid by exhaustively projecting each
grid node onto every centerline segment.  Distance is interpolated directly;
progress is interpolated through its (cos, sin) phase embedding so queries
stay continuous across the lap seam, and differences are taken modulo the lap
length centered at zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..exceptions import TrackConstructionError
from .fields import bilinear


@dataclass(frozen=True)
class TrackMap:
    """Closed centerline with gridded distance and progress fields."""

    centerline: np.ndarray   # (P, 2), closed: last point joins the first
    cum_arc: np.ndarray      # (P,) arc length at each centerline point
    length: float
    half_width: float
    origin: np.ndarray
    cell: float
    d_grid: np.ndarray       # (ny, nx) distance to centerline
    r_grid: np.ndarray       # (ny, nx) raw arc-length progress in [0, length)
    rcos_grid: np.ndarray
    rsin_grid: np.ndarray

    def distance(self, p: np.ndarray) -> np.ndarray:
        """Unsigned distance from points (..., 2) to the centerline."""
        return bilinear(self.d_grid, self.origin, self.cell, p)

    def progress(self, p: np.ndarray) -> np.ndarray:
        """Arc-length progress of the nearest centerline point, in [0, length)."""
        c = bilinear(self.rcos_grid, self.origin, self.cell, p)
        s = bilinear(self.rsin_grid, self.origin, self.cell, p)
        ang = np.arctan2(s, c)
        return np.mod(ang * self.length / (2.0 * np.pi), self.length)

    def centered_delta(self, r_a: np.ndarray, r_b: np.ndarray) -> np.ndarray:
        """Progress difference r_a - r_b wrapped into [-length/2, length/2)."""
        return np.mod(np.asarray(r_a) - np.asarray(r_b) + self.length / 2.0, self.length) - (
            self.length / 2.0
        )

    def point_at(self, s: float) -> np.ndarray:
        """Centerline point at arc length s (wrapped)."""
        s = float(np.mod(s, self.length))
        i = int(np.searchsorted(self.cum_arc, s, side="right") - 1)
        i = min(max(i, 0), len(self.centerline) - 1)
        a = self.centerline[i]
        b = self.centerline[(i + 1) % len(self.centerline)]
        seg = np.linalg.norm(b - a)
        t = 0.0 if seg == 0 else (s - self.cum_arc[i]) / seg
        return a + t * (b - a)

    def heading_at(self, s: float) -> float:
        """Centerline tangent heading at arc length s."""
        s = float(np.mod(s, self.length))
        i = int(np.searchsorted(self.cum_arc, s, side="right") - 1)
        i = min(max(i, 0), len(self.centerline) - 1)
        a = self.centerline[i]
        b = self.centerline[(i + 1) % len(self.centerline)]
        return float(np.arctan2(b[1] - a[1], b[0] - a[0]))


def _segments_intersect(p1, p2, p3, p4) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1 = orient(p3, p4, p1)
    d2 = orient(p3, p4, p2)
    d3 = orient(p1, p2, p3)
    d4 = orient(p1, p2, p4)
    return ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0))


def build_track(
    centerline: np.ndarray,
    half_width: float,
    cell: float = 0.2,
    margin: float = 1.0,
) -> TrackMap:
    """Construct a TrackMap from an ordered closed centerline.

    The grid covers the centerline bounding box expanded by half_width plus
    margin.  Self-intersecting or degenerate centerlines are rejected.
    """
    pts = np.asarray(centerline, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 3:
        raise TrackConstructionError("centerline needs at least 3 planar points")
    if np.allclose(pts[0], pts[-1]):
        pts = pts[:-1]
    if pts.shape[0] < 3:
        raise TrackConstructionError("closed centerline needs at least 3 distinct points")
    if half_width <= 0 or cell <= 0:
        raise TrackConstructionError("half_width and cell must be positive")

    seg_a = pts
    seg_b = np.roll(pts, -1, axis=0)
    seg_v = seg_b - seg_a
    seg_len = np.linalg.norm(seg_v, axis=1)
    if np.any(seg_len < 1e-12):
        raise TrackConstructionError("centerline contains repeated points")
    P = pts.shape[0]
    for i in range(P):
        for j in range(i + 1, P):
            # Adjacent segments share an endpoint; skip them (incl. the wrap pair).
            if j == i or j == (i + 1) % P or (j + 1) % P == i:
                continue
            if _segments_intersect(seg_a[i], seg_b[i], seg_a[j], seg_b[j]):
                raise TrackConstructionError(f"centerline self-intersects (segments {i}, {j})")

    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    length = float(cum[-1])
    cum_arc = cum[:-1]

    pad = half_width + margin
    x_min, y_min = pts.min(axis=0) - pad
    x_max, y_max = pts.max(axis=0) + pad
    nx = int(np.ceil((x_max - x_min) / cell)) + 1
    ny = int(np.ceil((y_max - y_min) / cell)) + 1
    xs = x_min + cell * np.arange(nx)
    ys = y_min + cell * np.arange(ny)
    X, Y = np.meshgrid(xs, ys)
    nodes = np.stack([X.ravel(), Y.ravel()], axis=1)

    # Exhaustive point-to-segment projection, chunked to bound memory.
    d_best = np.full(nodes.shape[0], np.inf)
    r_best = np.zeros(nodes.shape[0])
    chunk = 4096
    for lo in range(0, nodes.shape[0], chunk):
        block = nodes[lo : lo + chunk]                      # (C, 2)
        diff = block[:, None, :] - seg_a[None, :, :]        # (C, P, 2)
        t = np.einsum("cpk,pk->cp", diff, seg_v) / seg_len**2
        t = np.clip(t, 0.0, 1.0)
        proj = seg_a[None, :, :] + t[:, :, None] * seg_v[None, :, :]
        dist = np.linalg.norm(block[:, None, :] - proj, axis=2)
        best = np.argmin(dist, axis=1)
        rows = np.arange(block.shape[0])
        d_best[lo : lo + chunk] = dist[rows, best]
        r_best[lo : lo + chunk] = cum_arc[best] + t[rows, best] * seg_len[best]

    d_grid = d_best.reshape(ny, nx)
    r_grid = np.mod(r_best.reshape(ny, nx), length)
    phase = 2.0 * np.pi * r_grid / length
    return TrackMap(
        centerline=pts,
        cum_arc=cum_arc,
        length=length,
        half_width=float(half_width),
        origin=np.array([x_min, y_min]),
        cell=float(cell),
        d_grid=d_grid,
        r_grid=r_grid,
        rcos_grid=np.cos(phase),
        rsin_grid=np.sin(phase),
    )


def oval_centerline(
    straight: float, radius: float, n_points: int = 160, center=(0.0, 0.0)
) -> np.ndarray:
    """Stadium-shaped closed centerline: two straights joined by half circles."""
    if straight <= 0 or radius <= 0:
        raise TrackConstructionError("straight length and radius must be positive")
    cx, cy = center
    perim = 2.0 * straight + 2.0 * np.pi * radius
    ss = np.linspace(0.0, perim, n_points, endpoint=False)
    pts = np.zeros((n_points, 2))
    for i, s in enumerate(ss):
        if s < straight:
            pts[i] = (cx - straight / 2 + s, cy - radius)
        elif s < straight + np.pi * radius:
            a = (s - straight) / radius
            pts[i] = (cx + straight / 2 + radius * np.sin(a), cy - radius * np.cos(a))
        elif s < 2 * straight + np.pi * radius:
            d = s - straight - np.pi * radius
            pts[i] = (cx + straight / 2 - d, cy + radius)
        else:
            a = (s - 2 * straight - np.pi * radius) / radius
            pts[i] = (cx - straight / 2 - radius * np.sin(a), cy + radius * np.cos(a))
    return pts
