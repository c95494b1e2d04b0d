import numpy as np
import pytest


def write_bin(path, points):
    """Test-only writer for the KITTI .bin layout."""
    np.asarray(points, dtype="<f4").reshape(-1, 4).tofile(path)


def synthetic_scan(seed=0, n_beams=64, az_step=0.08, ground_z=-1.73, max_range=80.0):
    """HDL-64E-like sweep over a flat ground with a few boxes and walls.

    Beams with no hit within ``max_range`` are dropped, like real returns.
    """
    rng = np.random.default_rng(seed)
    elev = np.radians(np.linspace(2.0, -24.9, n_beams))
    az = np.radians(np.arange(-180.0, 180.0, az_step))
    e, a = np.meshgrid(elev, az, indexing="ij")
    d = np.stack([np.cos(e) * np.cos(a), np.cos(e) * np.sin(a), np.sin(e)], axis=-1).reshape(-1, 3)
    d += rng.normal(0, 2e-4, d.shape)
    t = np.full(len(d), np.inf)
    down = d[:, 2] < 0
    t[down] = ground_z / d[down, 2]
    # two side walls at y = +-9 m and a box ahead
    for y_wall in (9.0, -9.0):
        with np.errstate(divide="ignore", invalid="ignore"):
            tw = y_wall / d[:, 1]
        hit = (tw > 0) & (tw < t) & (d[:, 2] * tw > ground_z) & (d[:, 2] * tw < ground_z + 3)
        t[hit] = tw[hit]
    with np.errstate(divide="ignore", invalid="ignore"):
        tb = 25.0 / d[:, 0]
    zb = d[:, 2] * tb
    yb = d[:, 1] * tb
    hit = (tb > 0) & (tb < t) & (np.abs(yb - 3.0) < 1.0) & (zb > ground_z) & (zb < ground_z + 1.5)
    t[hit] = tb[hit]
    keep = np.isfinite(t) & (t < max_range)
    xyz = d[keep] * t[keep, None]
    inten = rng.uniform(0, 1, len(xyz))
    return np.column_stack([xyz, inten]).astype(np.float32)


# focal length / principal point close to KITTI's left color camera
KITTI_LIKE_CALIB = """P0: 7.215377e+02 0.000000e+00 6.095593e+02 0.000000e+00 0.000000e+00 7.215377e+02 1.728540e+02 0.000000e+00 0.000000e+00 0.000000e+00 1.000000e+00 0.000000e+00
P1: 7.215377e+02 0.000000e+00 6.095593e+02 -3.875744e+02 0.000000e+00 7.215377e+02 1.728540e+02 0.000000e+00 0.000000e+00 0.000000e+00 1.000000e+00 0.000000e+00
P2: 7.215377e+02 0.000000e+00 6.095593e+02 4.485728e+01 0.000000e+00 7.215377e+02 1.728540e+02 2.163791e-01 0.000000e+00 0.000000e+00 1.000000e+00 2.745884e-03
P3: 7.215377e+02 0.000000e+00 6.095593e+02 -3.395242e+02 0.000000e+00 7.215377e+02 1.728540e+02 2.199936e+00 0.000000e+00 0.000000e+00 1.000000e+00 2.729905e-03
R0_rect: 9.999239e-01 9.837760e-03 -7.445048e-03 -9.869795e-03 9.999421e-01 -4.278459e-03 7.402527e-03 4.351614e-03 9.999631e-01
Tr_velo_to_cam: 7.533745e-03 -9.999714e-01 -6.166020e-04 -4.069766e-03 1.480249e-02 7.280733e-04 -9.998902e-01 -7.631618e-02 9.998621e-01 7.523790e-03 1.480755e-02 -2.717806e-01
Tr_imu_to_velo: 9.999976e-01 7.553071e-04 -2.035826e-03 -8.086759e-01 -7.854027e-04 9.998898e-01 -1.482298e-02 3.195559e-01 2.024406e-03 1.482454e-02 9.998881e-01 -7.997231e-01
"""


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def scan_points():
    return synthetic_scan()


@pytest.fixture
def calib_file(tmp_path):
    p = tmp_path / "calib.txt"
    p.write_text(KITTI_LIKE_CALIB)
    return p


# -- acceptance summary -------------------------------------------------------

_CRITERIA: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        verdict = "PASS" if rep.passed else "FAIL"
        detail = dict(rep.user_properties).get("detail", "")
        _CRITERIA[number] = (verdict, title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        verdict, title, detail = _CRITERIA[number]
        terminalreporter.write_line(f"{verdict} criterion {number}: {title}" + (f" [{detail}]" if detail else ""))
