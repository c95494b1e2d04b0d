"""Readers for KITTI Velodyne scans, calibration files and ground-truth masks."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bev import BevSpec, RoadMask, read_pgm
from .errors import FormatError

log = logging.getLogger(__name__)

RECORD_BYTES = 16


@dataclass
class PointCloud:
    """Points in the vehicle frame, one ``(x, y, z, intensity)`` row each.

    x points forward, y left, z up (meters).  ``rejected`` counts records
    dropped at load time because they held a non-finite value.
    """

    points: np.ndarray
    rejected: int = 0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float32)
        if pts.size == 0:
            pts = pts.reshape(0, 4)
        if pts.ndim != 2 or pts.shape[1] != 4:
            raise FormatError(f"point array must be N x 4, got {pts.shape}")
        self.points = pts

    def __len__(self) -> int:
        return len(self.points)

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]

    @property
    def intensity(self) -> np.ndarray:
        return self.points[:, 3]


@dataclass
class CameraCalib:
    P2: np.ndarray
    R0_rect: np.ndarray
    Tr_velo_to_cam: np.ndarray

    def project_to_image(self, xyz: np.ndarray):
        """Pixel coordinates and camera-frame depth of Velodyne points."""
        xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
        hom = np.hstack([xyz, np.ones((len(xyz), 1))])
        cam = self.R0_rect @ (self.Tr_velo_to_cam @ hom.T)
        depth = cam[2]
        img = self.P2 @ np.vstack([cam, np.ones(len(xyz))])
        with np.errstate(divide="ignore", invalid="ignore"):
            u = img[0] / img[2]
            v = img[1] / img[2]
        return u, v, depth


def decode_point_records(raw: bytes) -> PointCloud:
    if len(raw) % RECORD_BYTES:
        raise FormatError(f"scan size {len(raw)} is not a multiple of {RECORD_BYTES} bytes")
    pts = np.frombuffer(raw, dtype="<f4").reshape(-1, 4).astype(np.float32)
    finite = np.isfinite(pts).all(axis=1)
    rejected = int(len(pts) - np.count_nonzero(finite))
    pts = pts[finite]
    np.clip(pts[:, 3], 0.0, 1.0, out=pts[:, 3])
    return PointCloud(pts, rejected)


def load_point_cloud(path) -> PointCloud:
    """Load a KITTI ``.bin`` scan of packed little-endian float32 quadruples."""
    cloud = decode_point_records(Path(path).read_bytes())
    if cloud.rejected:
        log.warning("%s: rejected %d non-finite records", path, cloud.rejected)
    return cloud


_CALIB_KEYS = {"P2": (3, 4), "R0_rect": (3, 3), "Tr_velo_to_cam": (3, 4)}


def load_calib(path) -> CameraCalib:
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        key, sep, rest = line.partition(":")
        key = key.strip()
        if not sep or key not in _CALIB_KEYS:
            continue
        shape = _CALIB_KEYS[key]
        try:
            nums = [float(tok) for tok in rest.split()]
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: non-numeric value for {key}") from exc
        if len(nums) != shape[0] * shape[1]:
            raise FormatError(
                f"{path}:{lineno}: {key} has {len(nums)} values, expected {shape[0] * shape[1]}"
            )
        values[key] = np.array(nums, dtype=np.float64).reshape(shape)
    missing = [k for k in _CALIB_KEYS if k not in values]
    if missing:
        raise FormatError(f"{path}: missing calibration key(s) {', '.join(missing)}")
    return CameraCalib(**values)


def load_mask(path, bev: BevSpec | None = None) -> RoadMask:
    """Read a P5 ground-truth mask; pixels >= 128 are road."""
    bev = bev or BevSpec()
    image = read_pgm(path)
    if image.shape != bev.shape:
        raise FormatError(f"{path}: mask is {image.shape[1]}x{image.shape[0]}, "
                          f"expected {bev.cols}x{bev.rows} for the configured BEV")
    return RoadMask(image >= 128, bev)
