import json
import subprocess
import sys

import numpy as np
import pytest

from roadseg.bev import read_pgm
from roadseg.cli import CONFIG_ENV, build_parser, run
from roadseg.weights import generate_random_weights, load_weights

from conftest import write_bin

SMALL_GRID = ["--rows", "16", "--cols", "8"]


@pytest.fixture
def scan_file(tmp_path, scan_points):
    p = tmp_path / "scan.bin"
    write_bin(p, scan_points)
    return p


@pytest.fixture
def weights_file(tmp_path):
    p = tmp_path / "w.lrsw"
    assert run(["gen-weights", "--seed", "42", "--out", str(p)]) == 0
    return p


def json_out(capsys):
    return json.loads(capsys.readouterr().out)


def test_gen_weights_byte_identical(tmp_path, weights_file):
    again = tmp_path / "again.lrsw"
    assert run(["gen-weights", "--seed", "42", "--out", str(again)]) == 0
    assert again.read_bytes() == weights_file.read_bytes()
    assert load_weights(again) == generate_random_weights(42)


def test_gen_weights_output_dir(tmp_path):
    assert run(["gen-weights", "--seed", "7", "--output-dir", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "weights_seed7.lrsw").exists()


def test_timing_json(capsys):
    assert run(["timing"]) == 0
    d = json_out(capsys)
    assert d["passes"] == 321 and d["cycles_per_pass"] == 18_000 and d["clock_hz"] == 350e6
    assert d["wall_time_ms"] == pytest.approx(16.5086, abs=1e-4)
    assert run(["timing", "--arch", "uniform", "--clock-hz", "700e6"]) == 0
    d = json_out(capsys)
    assert d["passes"] == 352
    assert d["wall_time_ms"] == pytest.approx(18.1029 / 2, abs=1e-4)


def test_timing_is_deterministic(capsys):
    run(["timing"])
    first = capsys.readouterr().out
    run(["timing"])
    assert capsys.readouterr().out == first


def test_config_file_and_env_precedence(tmp_path, capsys, monkeypatch):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"schedule": {"pipeline_latency": 0, "clock_hz": 1e9}}))
    assert run(["timing", "--config", str(cfg)]) == 0
    assert json_out(capsys)["cycles_per_pass"] == 17_680
    # flags beat the file
    assert run(["timing", "--config", str(cfg), "--pipeline-latency", "20"]) == 0
    assert json_out(capsys)["cycles_per_pass"] == 17_700
    monkeypatch.setenv(CONFIG_ENV, str(cfg))
    assert run(["timing"]) == 0
    assert json_out(capsys)["clock_hz"] == 1e9


def test_bad_config_exit_1(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"schedule": {"bogus": 1}}))
    assert run(["timing", "--config", str(cfg)]) == 1
    assert "bogus" in capsys.readouterr().err
    cfg.write_text("{not json")
    assert run(["timing", "--config", str(cfg)]) == 1


def test_usage_errors_exit_2():
    with pytest.raises(SystemExit) as e:
        run(["no-such-command"])
    assert e.value.code == 2
    with pytest.raises(SystemExit) as e:
        run(["gen-weights"])  # --seed missing
    assert e.value.code == 2
    with pytest.raises(SystemExit) as e:
        run(["timing", "--arch", "other"])
    assert e.value.code == 2


def test_io_errors_exit_1(tmp_path, weights_file):
    assert run(["pipeline", "--scan", str(tmp_path / "missing.bin"), "--weights", str(weights_file),
                "--out", str(tmp_path / "m.pgm")]) == 1
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"\0" * 10)
    assert run(["preprocess", "--scan", str(bad), "--out", str(tmp_path / "t.npy")]) == 1
    junk = tmp_path / "junk.lrsw"
    junk.write_bytes(b"XXXX" + b"\0" * 8)
    assert run(["pipeline", "--scan", str(bad), "--weights", str(junk), "--out", str(tmp_path / "m.pgm")]) == 1


def test_help_lists_flags():
    text = build_parser().format_help()
    for cmd in ("preprocess", "infer", "postprocess", "pipeline", "eval", "timing", "gen-weights", "stats"):
        assert cmd in text
    sub = subprocess.run([sys.executable, "-m", "roadseg", "pipeline", "--help"],
                         capture_output=True, text=True, check=True).stdout
    for flag in ("--scan", "--weights", "--engine", "--quantized", "--config", "--rows", "--bev-resolution"):
        assert flag in sub


def test_pipeline_engines_agree(tmp_path, scan_file, weights_file):
    ref, stream = tmp_path / "ref.pgm", tmp_path / "stream.pgm"
    common = ["pipeline", "--scan", str(scan_file), "--weights", str(weights_file), *SMALL_GRID]
    assert run(common + ["--quantized", "--out", str(ref), "--scores-out", str(tmp_path / "r.npy")]) == 0
    report = tmp_path / "rep.json"
    assert run(common + ["--engine", "streaming", "--out", str(stream), "--report", str(report),
                         "--scores-out", str(tmp_path / "s.npy")]) == 0
    assert np.array_equal(np.load(tmp_path / "r.npy"), np.load(tmp_path / "s.npy"))
    assert np.array_equal(read_pgm(ref), read_pgm(stream))
    assert read_pgm(ref).shape == (800, 400)
    assert json.loads(report.read_text())["passes"] == 321


def test_pipeline_deterministic(tmp_path, scan_file, weights_file):
    outs = []
    for k in range(2):
        out = tmp_path / f"m{k}.pgm"
        assert run(["pipeline", "--scan", str(scan_file), "--weights", str(weights_file),
                    *SMALL_GRID, "--out", str(out)]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_stepwise_matches_pipeline(tmp_path, scan_file, weights_file):
    t, s, m = tmp_path / "t.npy", tmp_path / "s.npy", tmp_path / "m.pgm"
    assert run(["preprocess", "--scan", str(scan_file), *SMALL_GRID, "--out", str(t)]) == 0
    assert np.load(t).shape == (16, 16, 8)
    assert run(["infer", "--tensor", str(t), "--weights", str(weights_file), *SMALL_GRID, "--out", str(s)]) == 0
    assert run(["postprocess", "--tensor", str(t), "--scores", str(s), *SMALL_GRID, "--out", str(m)]) == 0
    whole = tmp_path / "whole.pgm"
    assert run(["pipeline", "--scan", str(scan_file), "--weights", str(weights_file),
                *SMALL_GRID, "--out", str(whole)]) == 0
    assert m.read_bytes() == whole.read_bytes()
    # grid mismatch between tensor and flags is a format failure
    assert run(["infer", "--tensor", str(t), "--weights", str(weights_file), "--out", str(s)]) == 1


def test_eval_perfect_prediction(tmp_path, capsys):
    from roadseg.bev import BevSpec, RoadMask, save_mask
    bev = BevSpec()
    grid = np.zeros(bev.shape, bool)
    grid[300:, 100:300] = True
    gt = tmp_path / "gt.pgm"
    save_mask(RoadMask(grid, bev), gt)
    assert run(["eval", "--gt", str(gt), "--pred", str(gt)]) == 0
    d = json_out(capsys)
    assert d["f_max"] == 1.0 and d["ap"] == 1.0
    assert run(["eval", "--gt", str(gt)]) == 1


def test_stats(tmp_path, scan_file, calib_file, capsys):
    assert run(["stats", "--scan", str(scan_file), "--calib", str(calib_file)]) == 0
    d = json_out(capsys)
    assert d["points"] > 0 and d["rejected"] == 0
    assert d["spherical_fraction"] > d["imageview_fraction"] > 0
    assert run(["stats", "--scan", str(scan_file)]) == 0
    assert json_out(capsys)["imageview_fraction"] is None
    assert run(["stats", "--scan", str(scan_file), "--image-view"]) == 1
