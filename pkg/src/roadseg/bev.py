"""Bird's-eye-view grid geometry, road masks and their PGM encoding.

Cell ``(row, col)`` covers ``x in (x_max - (row+1)*res, x_max - row*res]`` and
``y in (y_max - (col+1)*res, y_max - col*res]``: row 0 is the far edge, the
last row touches ``x_min`` (the "bottom" edge next to the vehicle) and col 0
is the leftmost lateral strip.  Continuous cell coordinates ``(u, v)`` use the
same axes with ``u`` along columns and ``v`` along rows; the center of cell
``(row, col)`` is ``(col + 0.5, row + 0.5)``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, FormatError


@dataclass(frozen=True)
class BevSpec:
    x_min: float = 6.0
    x_max: float = 46.0
    y_min: float = -10.0
    y_max: float = 10.0
    resolution: float = 0.05

    def __post_init__(self):
        if not self.resolution > 0:
            raise ConfigurationError(f"BEV resolution must be positive, got {self.resolution}")
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ConfigurationError("BEV ranges must be non-degenerate")

    @property
    def rows(self) -> int:
        return int(round((self.x_max - self.x_min) / self.resolution))

    @property
    def cols(self) -> int:
        return int(round((self.y_max - self.y_min) / self.resolution))

    @property
    def shape(self) -> tuple[int, int]:
        return self.rows, self.cols

    def to_cell_coords(self, x, y):
        """Metric (x, y) to continuous (u, v) cell coordinates."""
        u = (self.y_max - np.asarray(y, dtype=np.float64)) / self.resolution
        v = (self.x_max - np.asarray(x, dtype=np.float64)) / self.resolution
        return u, v

    def cell_of(self, x, y):
        """Integer (row, col) arrays and a validity mask for metric points."""
        u, v = self.to_cell_coords(x, y)
        valid = (u >= 0) & (u < self.cols) & (v >= 0) & (v < self.rows)
        col = np.floor(np.where(valid, u, 0)).astype(np.int64)
        row = np.floor(np.where(valid, v, 0)).astype(np.int64)
        # guard against u == cols - eps rounding up
        np.clip(col, 0, self.cols - 1, out=col)
        np.clip(row, 0, self.rows - 1, out=row)
        return row, col, valid


@dataclass
class RoadMask:
    """BEV grid of road flags (bool) or road probabilities (float)."""

    grid: np.ndarray
    bev: BevSpec = field(default_factory=BevSpec)

    def __post_init__(self):
        self.grid = np.asarray(self.grid)
        if self.grid.shape != self.bev.shape:
            raise ConfigurationError(
                f"mask shape {self.grid.shape} does not match BEV {self.bev.shape}"
            )

    @classmethod
    def empty(cls, bev: BevSpec | None = None) -> "RoadMask":
        bev = bev or BevSpec()
        return cls(np.zeros(bev.shape, dtype=bool), bev)

    @property
    def road_count(self) -> int:
        return int(np.count_nonzero(self.grid))


_PGM_HEADER = re.compile(rb"P5\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s")


def read_pgm(path) -> np.ndarray:
    """Read an 8-bit binary PGM (P5, maxval 255) into a uint8 array."""
    data = Path(path).read_bytes()
    m = _PGM_HEADER.match(data)
    if m is None:
        raise FormatError(f"{path}: not a binary PGM (P5) file")
    width, height, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise FormatError(f"{path}: maxval {maxval} unsupported, expected 255")
    payload = data[m.end():]
    if len(payload) < width * height:
        raise FormatError(f"{path}: truncated pixel data ({len(payload)} < {width * height} bytes)")
    return np.frombuffer(payload, dtype=np.uint8, count=width * height).reshape(height, width).copy()


def write_pgm(path, image: np.ndarray) -> None:
    image = np.asarray(image, dtype=np.uint8)
    if image.ndim != 2:
        raise ConfigurationError("PGM image must be 2-D")
    height, width = image.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (width, height))
        f.write(np.ascontiguousarray(image).tobytes())


def save_mask(mask: RoadMask, path) -> None:
    """Write a boolean mask as PGM with road = 255."""
    write_pgm(path, np.where(np.asarray(mask.grid, dtype=bool), 255, 0).astype(np.uint8))
