"""Spherical-view binning of LiDAR points into the 16-channel network input."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bev import BevSpec
from .errors import ConfigurationError, GeometryError
from .kitti_io import CameraCalib, PointCloud

NUM_CHANNELS = 16
POINT_FIELDS = ("x", "y", "z", "theta", "phi", "r", "intensity")
CHANNEL_NAMES = (
    tuple(f"low_{f}" for f in POINT_FIELDS)
    + tuple(f"high_{f}" for f in POINT_FIELDS)
    + ("row", "col")
)
LOW, HIGH = 0, 7
RANGE_OFFSET = 5  # index of r inside a 7-field point group


@dataclass(frozen=True)
class GridSpec:
    rows: int = 64
    cols: int = 256
    azimuth_res: float = 0.4
    azimuth_max: float = 51.2
    elevation_min: float = -24.9
    elevation_max: float = 2.0

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ConfigurationError("grid must have at least one row and one column")
        if not self.elevation_min < self.elevation_max:
            raise ConfigurationError("elevation_min must be below elevation_max")
        if not math.isclose(self.cols * self.azimuth_res, 2 * self.azimuth_max, rel_tol=1e-9):
            raise ConfigurationError(
                f"cols * azimuth_res ({self.cols * self.azimuth_res}) must equal "
                f"2 * azimuth_max ({2 * self.azimuth_max})"
            )

    @property
    def shape(self) -> tuple[int, int]:
        return self.rows, self.cols

    @classmethod
    def with_columns(cls, rows: int, cols: int, azimuth_res: float = 0.4, **kw) -> "GridSpec":
        """Grid whose FOV is sized to ``cols`` columns of ``azimuth_res``."""
        return cls(rows, cols, azimuth_res, cols * azimuth_res / 2, **kw)


@dataclass
class FeatureTensor:
    """Channel-first ``[16, rows, cols]`` float64 input blob."""

    data: np.ndarray
    grid: GridSpec = field(default_factory=GridSpec)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.shape != (NUM_CHANNELS, *self.grid.shape):
            raise ConfigurationError(
                f"feature tensor shape {self.data.shape} != {(NUM_CHANNELS, *self.grid.shape)}"
            )

    @property
    def occupied(self) -> np.ndarray:
        return np.any(self.data[:HIGH + 7] != 0, axis=0)

    def low(self, name: str) -> np.ndarray:
        return self.data[LOW + POINT_FIELDS.index(name)]

    def high(self, name: str) -> np.ndarray:
        return self.data[HIGH + POINT_FIELDS.index(name)]


@dataclass(frozen=True)
class CoverageReport:
    spherical_fraction: float
    topview_fraction: float
    imageview_fraction: float | None = None

    def to_dict(self) -> dict:
        return {
            "spherical_fraction": self.spherical_fraction,
            "topview_fraction": self.topview_fraction,
            "imageview_fraction": self.imageview_fraction,
        }


def spherical_coords(p) -> tuple[float, float, float]:
    """(azimuth deg, elevation deg, range m) of one point; azimuth 0 = forward, + = left."""
    x, y, z = (float(v) for v in p[:3])
    r = math.sqrt(x * x + y * y + z * z)
    if r == 0.0:
        raise GeometryError("direction of a point at the origin is undefined")
    return math.degrees(math.atan2(y, x)), math.degrees(math.asin(max(-1.0, min(1.0, z / r)))), r


def spherical_coords_array(xyz: np.ndarray):
    """Vectorized ``spherical_coords``; rows with r == 0 give NaN angles."""
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    r = np.sqrt(np.einsum("ij,ij->i", xyz, xyz))
    theta = np.degrees(np.arctan2(xyz[:, 1], xyz[:, 0]))
    with np.errstate(invalid="ignore", divide="ignore"):
        phi = np.degrees(np.arcsin(np.clip(xyz[:, 2] / r, -1.0, 1.0)))
    phi[r == 0] = np.nan
    theta[r == 0] = np.nan
    return theta, phi, r


def cell_indices(theta, phi, g: GridSpec):
    """Vectorized ``cell_index``: (row, col, valid) arrays."""
    theta = np.asarray(theta, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    valid = (
        (theta > -g.azimuth_max) & (theta <= g.azimuth_max)
        & (phi >= g.elevation_min) & (phi <= g.elevation_max)
    )
    with np.errstate(invalid="ignore"):
        col = np.floor(g.cols * (g.azimuth_max - theta) / (2 * g.azimuth_max))
        row = np.floor(g.rows * (g.elevation_max - phi) / (g.elevation_max - g.elevation_min))
    col = np.clip(np.where(valid, col, 0), 0, g.cols - 1).astype(np.int64)
    row = np.clip(np.where(valid, row, 0), 0, g.rows - 1).astype(np.int64)
    return row, col, valid


def cell_index(theta: float, phi: float, g: GridSpec | None = None) -> tuple[int, int] | None:
    """Grid cell of a ray, or None when it falls outside the field of view."""
    row, col, valid = cell_indices(theta, phi, g or GridSpec())
    if not valid:
        return None
    return int(row), int(col)


def _first_per_cell(cells: np.ndarray, primary: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """For each distinct cell, the point index minimizing ``primary`` (ties: lowest index)."""
    order = np.lexsort((np.arange(len(cells)), primary, cells))
    sorted_cells = cells[order]
    first = np.flatnonzero(np.r_[True, sorted_cells[1:] != sorted_cells[:-1]])
    return sorted_cells[first], order[first]


def build_feature_tensor(cloud: PointCloud, g: GridSpec | None = None) -> FeatureTensor:
    """Bin points by spherical cell; keep the lowest and highest point of each cell."""
    g = g or GridSpec()
    data = np.zeros((NUM_CHANNELS, g.rows, g.cols), dtype=np.float64)
    data[14] = np.arange(g.rows, dtype=np.float64)[:, None]
    data[15] = np.arange(g.cols, dtype=np.float64)[None, :]

    pts = cloud.points.astype(np.float64)
    if len(pts):
        theta, phi, r = spherical_coords_array(pts[:, :3])
        row, col, valid = cell_indices(theta, phi, g)
        valid &= r > 0
        idx = np.flatnonzero(valid)
        if len(idx):
            fields = np.column_stack([pts[idx, :3], theta[idx], phi[idx], r[idx], pts[idx, 3]])
            cells = row[idx] * g.cols + col[idx]
            z = fields[:, 2]
            for base, key in ((LOW, z), (HIGH, -z)):
                winners_cell, winners = _first_per_cell(cells, key)
                rr, cc = np.divmod(winners_cell, g.cols)
                data[base:base + 7, rr, cc] = fields[winners].T
    return FeatureTensor(data, g)


def coverage_stats(
    cloud: PointCloud,
    g: GridSpec | None = None,
    bev: BevSpec | None = None,
    calib: CameraCalib | None = None,
    image_dims: tuple[int, int] | None = None,
) -> CoverageReport:
    """Fraction of cells / pixels hit by at least one point in each view.

    ``image_dims`` is ``(width, height)``; the image-view fraction is only
    computed when it is given, and then requires ``calib``.
    """
    g = g or GridSpec()
    bev = bev or BevSpec()
    if image_dims is not None and calib is None:
        raise ConfigurationError("image-view coverage requires camera calibration")

    pts = cloud.points.astype(np.float64)
    theta, phi, r = spherical_coords_array(pts[:, :3])
    row, col, valid = cell_indices(theta, phi, g)
    valid &= r > 0
    spherical = np.unique(row[valid] * g.cols + col[valid]).size / (g.rows * g.cols)

    brow, bcol, bvalid = bev.cell_of(pts[:, 0], pts[:, 1])
    top = np.unique(brow[bvalid] * bev.cols + bcol[bvalid]).size / (bev.rows * bev.cols)

    image = None
    if image_dims is not None:
        width, height = image_dims
        if len(pts):
            u, v, depth = calib.project_to_image(pts[:, :3])
            ok = (depth > 0) & np.isfinite(u) & np.isfinite(v)
            ok &= (u >= 0) & (u < width) & (v >= 0) & (v < height)
            pix = np.floor(v[ok]).astype(np.int64) * width + np.floor(u[ok]).astype(np.int64)
            image = np.unique(pix).size / (width * height)
        else:
            image = 0.0
    return CoverageReport(float(spherical), float(top), None if image is None else float(image))
