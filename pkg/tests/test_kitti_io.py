import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from roadseg.bev import BevSpec, write_pgm
from roadseg.errors import FormatError
from roadseg.kitti_io import load_calib, load_mask, load_point_cloud

from conftest import KITTI_LIKE_CALIB, write_bin


def test_empty_scan(tmp_path):
    p = tmp_path / "e.bin"
    p.write_bytes(b"")
    assert len(load_point_cloud(p)) == 0


def test_single_record(tmp_path):
    p = tmp_path / "one.bin"
    p.write_bytes(struct.pack("<4f", 1.0, 0.0, 0.0, 0.5))
    cloud = load_point_cloud(p)
    assert cloud.points.tolist() == [[1.0, 0.0, 0.0, 0.5]]


def test_size_not_multiple_of_16(tmp_path):
    p = tmp_path / "bad.bin"
    p.write_bytes(b"\0" * 17)
    with pytest.raises(FormatError):
        load_point_cloud(p)


def test_point_count_is_size_over_16(tmp_path, scan_points):
    p = tmp_path / "scan.bin"
    write_bin(p, scan_points)
    assert len(load_point_cloud(p)) == p.stat().st_size // 16 == len(scan_points)


def test_non_finite_records_rejected(tmp_path):
    p = tmp_path / "nan.bin"
    write_bin(p, [[1, 2, 3, 0.1], [np.nan, 0, 0, 0], [4, 5, np.inf, 0], [7, 8, 9, 0.2]])
    cloud = load_point_cloud(p)
    assert cloud.rejected == 2
    assert cloud.points[:, 0].tolist() == [1, 7]


def test_intensity_clamped(tmp_path):
    p = tmp_path / "i.bin"
    write_bin(p, [[1, 0, 0, -0.5], [1, 0, 0, 1.7], [1, 0, 0, 0.25]])
    assert load_point_cloud(p).intensity.tolist() == [0.0, 1.0, 0.25]


finite32 = st.floats(-200, 200, width=32)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float32, st.tuples(st.integers(0, 40), st.just(4)), elements=finite32))
def test_scan_round_trip(tmp_path_factory, pts):
    pts[:, 3] = np.clip(pts[:, 3], 0, 1)
    p = tmp_path_factory.mktemp("rt") / "s.bin"
    write_bin(p, pts)
    loaded = load_point_cloud(p).points
    assert loaded.tobytes() == pts.astype("<f4").tobytes()


def test_calib_verbatim(calib_file):
    c = load_calib(calib_file)
    lines = dict(l.split(":", 1) for l in KITTI_LIKE_CALIB.strip().splitlines())
    for key, shape in (("P2", (3, 4)), ("R0_rect", (3, 3)), ("Tr_velo_to_cam", (3, 4))):
        expected = np.array([float(v) for v in lines[key].split()]).reshape(shape)
        assert np.array_equal(getattr(c, key), expected)


def test_calib_identity_rect(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("P2: " + " ".join(["1"] * 12) + "\nR0_rect: 1 0 0 0 1 0 0 0 1\n"
                 "Tr_velo_to_cam: " + " ".join(["0"] * 12) + "\n")
    assert np.array_equal(load_calib(p).R0_rect, np.eye(3))


def test_calib_missing_key(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("R0_rect: 1 0 0 0 1 0 0 0 1\nTr_velo_to_cam: " + " ".join(["0"] * 12) + "\n")
    with pytest.raises(FormatError, match="P2"):
        load_calib(p)


def test_calib_wrong_count(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("P2: 1 2 3\nR0_rect: 1 0 0 0 1 0 0 0 1\nTr_velo_to_cam: " + " ".join(["0"] * 12) + "\n")
    with pytest.raises(FormatError, match="values"):
        load_calib(p)


SMALL_BEV = BevSpec(0.0, 0.8, -0.4, 0.4, 0.1)  # 8 x 8 cells


@pytest.mark.parametrize("value,count", [(0, 0), (255, 64)])
def test_mask_uniform(tmp_path, value, count):
    p = tmp_path / "m.pgm"
    write_pgm(p, np.full((8, 8), value, np.uint8))
    assert load_mask(p, SMALL_BEV).road_count == count


def test_mask_checkerboard_half(tmp_path):
    board = ((np.indices((8, 8)).sum(axis=0) % 2) * 255).astype(np.uint8)
    p = tmp_path / "m.pgm"
    write_pgm(p, board)
    assert load_mask(p, SMALL_BEV).road_count == 32


def test_mask_threshold_128(tmp_path):
    img = np.zeros((8, 8), np.uint8)
    img[0, 0], img[0, 1] = 127, 128
    p = tmp_path / "m.pgm"
    write_pgm(p, img)
    grid = load_mask(p, SMALL_BEV).grid
    assert not grid[0, 0] and grid[0, 1]


def test_mask_default_bev_dims(tmp_path):
    p = tmp_path / "m.pgm"
    write_pgm(p, np.zeros((800, 400), np.uint8))
    assert load_mask(p).grid.shape == (800, 400)


def test_mask_with_header_comment(tmp_path):
    p = tmp_path / "m.pgm"
    p.write_bytes(b"P5\n# made by a converter\n8 8\n255\n" + bytes([255]) * 64)
    assert load_mask(p, SMALL_BEV).road_count == 64


@pytest.mark.parametrize("blob", [b"P2\n8 8\n255\n" + b"0" * 64, b"P5\n8 8\n65535\n" + b"\0" * 128])
def test_mask_bad_format(tmp_path, blob):
    p = tmp_path / "m.pgm"
    p.write_bytes(blob)
    with pytest.raises(FormatError):
        load_mask(p, SMALL_BEV)


def test_mask_wrong_dimensions(tmp_path):
    p = tmp_path / "m.pgm"
    write_pgm(p, np.zeros((7, 8), np.uint8))
    with pytest.raises(FormatError):
        load_mask(p, SMALL_BEV)
