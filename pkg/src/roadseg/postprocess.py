"""Drivable-area extraction: furthest road point per column, contour, fill."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bev import BevSpec, RoadMask, save_mask  # noqa: F401  (re-exported)
from .errors import EmptyContourError, ShapeError
from .projection import LOW, RANGE_OFFSET, FeatureTensor


@dataclass(frozen=True)
class FurthestCell:
    row: int
    col: int
    x: float
    y: float
    r: float


@dataclass
class Polygon:
    """Vertices ``[n, 2]`` as continuous BEV ``(u, v)`` = (column, row) coordinates."""

    vertices: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 2)

    def __len__(self) -> int:
        return len(self.vertices)

    @property
    def area(self) -> float:
        u, v = self.vertices[:, 0], self.vertices[:, 1]
        return 0.5 * abs(float(np.dot(u, np.roll(v, -1)) - np.dot(v, np.roll(u, -1))))


def furthest_road_cell_per_column(labels: np.ndarray, features: FeatureTensor) -> list[FurthestCell | None]:
    """Per grid column, the occupied road cell with the largest measured range.

    Range ties go to the smallest row index.
    """
    labels = np.asarray(labels, dtype=bool)
    if labels.shape != features.grid.shape:
        raise ShapeError(f"labels {labels.shape} and features {features.grid.shape} differ")
    r = features.data[LOW + RANGE_OFFSET]
    candidate = labels & features.occupied
    score = np.where(candidate, r, -np.inf)
    best = np.argmax(score, axis=0)  # first maximum, i.e. lowest row
    out: list[FurthestCell | None] = []
    for col, row in enumerate(best):
        if not candidate[row, col]:
            out.append(None)
            continue
        out.append(FurthestCell(int(row), col,
                                float(features.data[LOW, row, col]),
                                float(features.data[LOW + 1, row, col]),
                                float(r[row, col])))
    return out


def contour_polygon(cells: list[FurthestCell | None], bev: BevSpec | None = None) -> Polygon:
    """Polyline through the furthest points, closed along the near BEV edge.

    Points are taken in column order, those outside the BEV are dropped, and
    two vertices on the bottom edge (``v = bev.rows``) below the last and the
    first point close the polygon.
    """
    bev = bev or BevSpec()
    pts = sorted((c for c in cells if c is not None), key=lambda c: c.col)
    if pts:
        x = np.array([c.x for c in pts])
        y = np.array([c.y for c in pts])
        u, v = bev.to_cell_coords(x, y)
        keep = (u >= 0) & (u <= bev.cols) & (v >= 0) & (v <= bev.rows)
        u, v = u[keep], v[keep]
    else:
        u = v = np.empty(0)
    if len(u) < 1:
        raise EmptyContourError("no furthest road point falls inside the bird's-eye view")
    bottom = float(bev.rows)
    vertices = np.column_stack([u, v]).tolist() + [[u[-1], bottom], [u[0], bottom]]
    return Polygon(vertices)


def fill_polygon(poly: Polygon, bev: BevSpec | None = None) -> RoadMask:
    """Even-odd scanline fill over cell centers; centers on an edge count as inside."""
    bev = bev or BevSpec()
    rows, cols = bev.shape
    grid = np.zeros((rows, cols), dtype=bool)
    if len(poly) < 3:
        return RoadMask(grid, bev)
    p0 = poly.vertices
    p1 = np.roll(p0, -1, axis=0)
    u0, v0, u1, v1 = p0[:, 0], p0[:, 1], p1[:, 0], p1[:, 1]
    vmin, vmax = np.minimum(v0, v1), np.maximum(v0, v1)
    flat = v0 == v1
    umin, umax = np.minimum(u0, u1), np.maximum(u0, u1)

    lo = max(0, math.floor(vmin.min() - 0.5))
    hi = min(rows - 1, math.ceil(vmax.max() - 0.5))
    for row in range(lo, hi + 1):
        yc = row + 0.5
        # half-open crossing rule: an edge counts if vmin <= yc < vmax
        cross = ~flat & (vmin <= yc) & (yc < vmax)
        if np.any(cross):
            xs = np.sort(u0[cross] + (yc - v0[cross]) * (u1[cross] - u0[cross]) / (v1[cross] - v0[cross]))
            for a, b in zip(xs[0::2], xs[1::2]):
                _span(grid[row], a, b)
        # boundary: horizontal edges on this scanline and edge points hitting a center
        for k in np.flatnonzero(flat & (v0 == yc)):
            _span(grid[row], umin[k], umax[k])
        touch = ~flat & (vmin <= yc) & (yc <= vmax)
        if np.any(touch):
            xt = u0[touch] + (yc - v0[touch]) * (u1[touch] - u0[touch]) / (v1[touch] - v0[touch])
            c = xt - 0.5
            on = (c == np.floor(c)) & (c >= 0) & (c < cols)
            grid[row, c[on].astype(np.int64)] = True
    return RoadMask(grid, bev)


def _span(row: np.ndarray, a: float, b: float) -> None:
    """Mark cells whose center lies in ``[a, b]``."""
    first = max(0, math.ceil(a - 0.5))
    last = min(len(row) - 1, math.floor(b - 0.5))
    if last >= first:
        row[first:last + 1] = True


def drivable_area(labels: np.ndarray, features: FeatureTensor, bev: BevSpec | None = None) -> RoadMask:
    """Labels on the spherical grid to a filled BEV road mask (empty if no contour)."""
    bev = bev or BevSpec()
    try:
        poly = contour_polygon(furthest_road_cell_per_column(labels, features), bev)
    except EmptyContourError:
        return RoadMask.empty(bev)
    return fill_polygon(poly, bev)
