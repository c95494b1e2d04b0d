"""Command-line entry point: ``roadseg <subcommand> [flags]``.

Settings come from built-in defaults, then an optional JSON config file
(``--config`` or the ``ROADSEG_CONFIG`` environment variable), then flags;
later sources win.  Exit status: 0 success, 1 I/O or format failure, 2 usage.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import evaluate as ev
from . import fixedpoint as fx
from . import kitti_io, postprocess, projection, refnet, streamconv, weights
from .bev import BevSpec, read_pgm, save_mask
from .errors import ConfigurationError, RoadsegError

log = logging.getLogger("roadseg")

CONFIG_ENV = "ROADSEG_CONFIG"
ENGINES = ("reference", "streaming")


@dataclass
class PipelineConfig:
    grid: projection.GridSpec = field(default_factory=projection.GridSpec)
    bev: BevSpec = field(default_factory=BevSpec)
    quant: fx.QuantConfig = field(default_factory=fx.QuantConfig)
    schedule: streamconv.StreamSchedule = field(default_factory=streamconv.StreamSchedule)
    engine: str = "reference"
    paths: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.engine not in ENGINES:
            raise ConfigurationError(f"engine must be one of {ENGINES}, got {self.engine!r}")


_GRID_KEYS = ("rows", "cols", "azimuth_res", "elevation_min", "elevation_max")
_BEV_KEYS = ("x_min", "x_max", "y_min", "y_max", "resolution")
_SCHED_KEYS = ("clock_hz", "pipeline_latency", "pass_cycles", "overhead_cycles")
_PATH_KEYS = ("scan", "calib", "gt", "weights", "output_dir")


def load_config(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON config ({exc})") from exc
    if not isinstance(doc, dict):
        raise ConfigurationError(f"{path}: config must be a JSON object")
    return doc


def build_config(args: argparse.Namespace) -> PipelineConfig:
    path = getattr(args, "config", None) or os.environ.get(CONFIG_ENV)
    doc = load_config(path) if path else {}

    def section(name, keys, prefix=""):
        values = dict(doc.get(name, {}))
        unknown = set(values) - set(keys) - ({"azimuth_max"} if name == "grid" else set())
        if unknown:
            raise ConfigurationError(f"unknown {name} config key(s): {', '.join(sorted(unknown))}")
        for k in keys:
            v = getattr(args, prefix + k, None)
            if v is not None:
                values[k] = v
        return values

    g = section("grid", _GRID_KEYS)
    rows, cols = int(g.pop("rows", 64)), int(g.pop("cols", 256))
    res = float(g.pop("azimuth_res", 0.4))
    # the FOV follows from cols * azimuth_res unless the config pins it
    g.setdefault("azimuth_max", cols * res / 2)
    grid = projection.GridSpec(rows, cols, res, **g)
    bev = BevSpec(**section("bev", _BEV_KEYS, prefix="bev_"))
    q = section("quant", ("feature_frac", "weight_frac", "input_frac"))
    quant = fx.QuantConfig(
        feature=fx.QFormat(int(q.get("feature_frac", fx.FEATURE_Q.frac_bits))),
        weight=fx.QFormat(int(q.get("weight_frac", fx.WEIGHT_Q.frac_bits))),
        input=fx.QFormat(int(q.get("input_frac", fx.INPUT_Q.frac_bits))),
    )
    schedule = streamconv.StreamSchedule(**section("schedule", _SCHED_KEYS))
    paths = section("paths", _PATH_KEYS)
    engine = getattr(args, "engine", None) or doc.get("engine", "reference")
    return PipelineConfig(grid, bev, quant, schedule, engine, paths)


# -- helpers ----------------------------------------------------------------

def _require(cfg: PipelineConfig, key: str, flag: str) -> str:
    value = cfg.paths.get(key)
    if not value:
        raise ConfigurationError(f"missing --{flag} (or paths.{key} in the config)")
    return value


def _output(args, cfg: PipelineConfig, default_name: str | None) -> Path | None:
    if args.out:
        return Path(args.out)
    if cfg.paths.get("output_dir") and default_name:
        out_dir = Path(cfg.paths["output_dir"])
        out_dir.mkdir(parents=True, exist_ok=True)
        return out_dir / default_name
    return None


def _emit_json(doc: dict, out: Path | None) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        out.write_text(text)


def _load_tensor(path, cfg: PipelineConfig) -> projection.FeatureTensor:
    data = np.load(path, allow_pickle=False)
    if data.shape[1:] != cfg.grid.shape:
        raise ConfigurationError(f"{path}: tensor grid {data.shape[1:]} does not match configured {cfg.grid.shape}")
    return projection.FeatureTensor(data, cfg.grid)


def _infer(tensor, ws: weights.WeightSet, cfg: PipelineConfig, quantized: bool):
    """Score map and (streaming only) cycle report."""
    ws.validate(tensor.data.shape[0])
    if cfg.engine == "streaming":
        res = streamconv.run_streaming(tensor, ws, cfg.schedule, cfg.quant)
        if res.saturated or res.input_saturated:
            log.warning("fixed-point saturation: %d input values, %d writebacks",
                        res.input_saturated, res.saturated)
        return res.scores, res.report
    if quantized:
        codes = refnet.forward_quantized(tensor, ws, cfg.quant)
        return fx.dequantize(codes, cfg.quant.feature), None
    return refnet.forward(tensor, ws), None


def _labels(scores: np.ndarray, threshold: float | None) -> np.ndarray:
    if threshold is None:
        return refnet.argmax_labels(scores)
    return refnet.road_probability(scores) >= threshold


# -- subcommands ------------------------------------------------------------

def cmd_preprocess(args, cfg):
    cloud = kitti_io.load_point_cloud(_require(cfg, "scan", "scan"))
    tensor = projection.build_feature_tensor(cloud, cfg.grid)
    out = _output(args, cfg, "features.npy")
    if out is None:
        raise ConfigurationError("missing --out")
    np.save(out, tensor.data)
    log.info("wrote %s (%d points, %d rejected)", out, len(cloud), cloud.rejected)


def cmd_infer(args, cfg):
    tensor = _load_tensor(args.tensor, cfg)
    ws = weights.load_weights(_require(cfg, "weights", "weights"))
    scores, report = _infer(tensor, ws, cfg, args.quantized)
    out = _output(args, cfg, "scores.npy")
    if out is None:
        raise ConfigurationError("missing --out")
    np.save(out, scores)
    if args.report and report is not None:
        _emit_json(report.to_dict(), Path(args.report))


def cmd_postprocess(args, cfg):
    tensor = _load_tensor(args.tensor, cfg)
    scores = np.load(args.scores, allow_pickle=False)
    mask = postprocess.drivable_area(_labels(scores, args.threshold), tensor, cfg.bev)
    out = _output(args, cfg, "mask.pgm")
    if out is None:
        raise ConfigurationError("missing --out")
    save_mask(mask, out)


def cmd_pipeline(args, cfg):
    cloud = kitti_io.load_point_cloud(_require(cfg, "scan", "scan"))
    tensor = projection.build_feature_tensor(cloud, cfg.grid)
    ws = weights.load_weights(_require(cfg, "weights", "weights"))
    scores, report = _infer(tensor, ws, cfg, args.quantized)
    mask = postprocess.drivable_area(_labels(scores, args.threshold), tensor, cfg.bev)
    out = _output(args, cfg, "mask.pgm")
    if out is None:
        raise ConfigurationError("missing --out")
    save_mask(mask, out)
    if args.scores_out:
        np.save(args.scores_out, scores)
    if args.report and report is not None:
        _emit_json(report.to_dict(), Path(args.report))


def cmd_eval(args, cfg):
    gt = kitti_io.load_mask(_require(cfg, "gt", "gt"), cfg.bev)
    valid = kitti_io.load_mask(args.valid, cfg.bev) if args.valid else None
    if args.pred:
        image = read_pgm(args.pred)
        if image.shape != cfg.bev.shape:
            raise ConfigurationError(f"{args.pred}: prediction size does not match the BEV grid")
        source = ev.threshold_source(image / 255.0)
    elif args.scores and args.tensor:
        tensor = _load_tensor(args.tensor, cfg)
        prob = refnet.road_probability(np.load(args.scores, allow_pickle=False))
        source = lambda t: postprocess.drivable_area(prob >= t, tensor, cfg.bev)  # noqa: E731
    else:
        raise ConfigurationError("eval needs --pred, or --scores together with --tensor")
    thresholds = ev.DEFAULT_THRESHOLDS if args.thresholds is None else args.thresholds
    report = ev.evaluate(source, gt, thresholds, valid)
    _emit_json(report.to_dict(), _output(args, cfg, None))


def cmd_timing(args, cfg):
    if args.arch == "uniform":
        arch = [(cin, weights.HIDDEN_CHANNELS) for cin, _ in weights.architecture()]
    else:
        arch = weights.architecture()
    report = streamconv.estimate_timing(cfg.schedule, arch, cfg.grid)
    _emit_json(report.to_dict(), _output(args, cfg, None))


def cmd_gen_weights(args, cfg):
    out = _output(args, cfg, f"weights_seed{args.seed}.lrsw")
    if out is None:
        raise ConfigurationError("missing --out")
    weights.save_weights(weights.generate_random_weights(args.seed), out)


def cmd_stats(args, cfg):
    cloud = kitti_io.load_point_cloud(_require(cfg, "scan", "scan"))
    calib_path = cfg.paths.get("calib")
    calib = kitti_io.load_calib(calib_path) if calib_path else None
    dims = (args.image_width, args.image_height) if calib is not None or args.image_view else None
    report = projection.coverage_stats(cloud, cfg.grid, cfg.bev, calib, dims)
    doc = report.to_dict()
    doc["points"] = len(cloud)
    doc["rejected"] = cloud.rejected
    _emit_json(doc, _output(args, cfg, None))


# -- parser -----------------------------------------------------------------

def _add_grid(p):
    g = p.add_argument_group("spherical grid")
    g.add_argument("--rows", type=int, help="grid rows (default 64)")
    g.add_argument("--cols", type=int, help="grid columns (default 256)")
    g.add_argument("--azimuth-res", dest="azimuth_res", type=float, help="degrees per column (default 0.4)")
    g.add_argument("--elevation-min", dest="elevation_min", type=float, help="degrees (default -24.9)")
    g.add_argument("--elevation-max", dest="elevation_max", type=float, help="degrees (default 2.0)")


def _add_bev(p):
    g = p.add_argument_group("bird's-eye view")
    for k, d in (("x_min", 6.0), ("x_max", 46.0), ("y_min", -10.0), ("y_max", 10.0), ("resolution", 0.05)):
        g.add_argument(f"--bev-{k.replace('_', '-')}", dest=f"bev_{k}", type=float, help=f"default {d}")


def _add_quant(p):
    g = p.add_argument_group("fixed point")
    g.add_argument("--feature-frac", dest="feature_frac", type=int, help="feature-map fraction bits (default 8)")
    g.add_argument("--weight-frac", dest="weight_frac", type=int, help="weight fraction bits (default 14)")
    g.add_argument("--input-frac", dest="input_frac", type=int, help="input-tensor fraction bits (default 7)")


def _add_schedule(p):
    g = p.add_argument_group("schedule")
    g.add_argument("--clock-hz", dest="clock_hz", type=float, help="clock frequency (default 350e6)")
    g.add_argument("--pipeline-latency", dest="pipeline_latency", type=int, help="cycles per pass added to the scan (default 320)")
    g.add_argument("--pass-cycles", dest="pass_cycles", type=int, help="override the per-pass cycle cost")
    g.add_argument("--overhead-cycles", dest="overhead_cycles", type=int, help="cycles between passes (default 0)")


def _add_engine(p):
    p.add_argument("--engine", choices=ENGINES, help="inference engine (default reference)")
    p.add_argument("--quantized", action="store_true", help="run the reference engine in fixed point")
    p.add_argument("--report", help="write the streaming CycleReport JSON here")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="roadseg", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help=f"JSON config file (or ${CONFIG_ENV})")
    common.add_argument("--out", help="output file")
    common.add_argument("--output-dir", dest="output_dir", help="directory for default-named outputs")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")

    p = sub.add_parser("preprocess", parents=[common], help="scan -> feature tensor (.npy)")
    p.add_argument("--scan", help="KITTI Velodyne .bin")
    _add_grid(p)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("infer", parents=[common], help="tensor + weights -> score map (.npy)")
    p.add_argument("--tensor", required=True, help="feature tensor .npy")
    p.add_argument("--weights", help="LRSW weight file")
    _add_engine(p)
    _add_grid(p)
    _add_quant(p)
    _add_schedule(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("postprocess", parents=[common], help="scores -> BEV road mask (.pgm)")
    p.add_argument("--tensor", required=True, help="feature tensor .npy")
    p.add_argument("--scores", required=True, help="score map .npy")
    p.add_argument("--threshold", type=float, help="road if probability >= threshold (default: argmax)")
    _add_grid(p)
    _add_bev(p)
    p.set_defaults(func=cmd_postprocess)

    p = sub.add_parser("pipeline", parents=[common], help="scan -> BEV road mask in one run")
    p.add_argument("--scan", help="KITTI Velodyne .bin")
    p.add_argument("--weights", help="LRSW weight file")
    p.add_argument("--threshold", type=float, help="road if probability >= threshold (default: argmax)")
    p.add_argument("--scores-out", dest="scores_out", help="also save the score map (.npy)")
    _add_engine(p)
    _add_grid(p)
    _add_bev(p)
    _add_quant(p)
    _add_schedule(p)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("eval", parents=[common], help="prediction vs ground truth -> F-max / AP JSON")
    p.add_argument("--gt", help="ground-truth mask .pgm")
    p.add_argument("--pred", help="predicted mask or probability .pgm")
    p.add_argument("--scores", help="score map .npy (swept through post-processing)")
    p.add_argument("--tensor", help="feature tensor .npy matching --scores")
    p.add_argument("--valid", help="mask of cells to evaluate .pgm")
    p.add_argument("--thresholds", type=float, nargs="+", help="thresholds to sweep (default 0.01..0.99)")
    _add_grid(p)
    _add_bev(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("timing", parents=[common], help="schedule -> CycleReport JSON")
    p.add_argument("--arch", choices=("derived", "uniform"), default="derived",
                   help="derived: 16->64->...->2 (321 passes); uniform: every layer 64 deep (352)")
    _add_grid(p)
    _add_schedule(p)
    p.set_defaults(func=cmd_timing)

    p = sub.add_parser("gen-weights", parents=[common], help="seed -> LRSW weight file")
    p.add_argument("--seed", type=int, required=True, help="SplitMix64 seed")
    p.set_defaults(func=cmd_gen_weights)

    p = sub.add_parser("stats", parents=[common], help="scan [+ calib] -> view coverage JSON")
    p.add_argument("--scan", help="KITTI Velodyne .bin")
    p.add_argument("--calib", help="KITTI calibration .txt (enables image-view coverage)")
    p.add_argument("--image-view", dest="image_view", action="store_true",
                   help="require image-view coverage (fails without --calib)")
    p.add_argument("--image-width", dest="image_width", type=int, default=1242)
    p.add_argument("--image-height", dest="image_height", type=int, default=375)
    _add_grid(p)
    _add_bev(p)
    p.set_defaults(func=cmd_stats)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 on usage errors
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = build_config(args)
        args.func(args, cfg)
    except (RoadsegError, OSError, ValueError) as exc:
        print(f"roadseg {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run())

