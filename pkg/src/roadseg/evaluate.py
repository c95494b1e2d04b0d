"""Road-mask metrics: confusion counts, threshold sweep, F-max and AP."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .bev import RoadMask
from .errors import ConfigurationError, ShapeError

DEFAULT_THRESHOLDS = tuple(round(0.01 * k, 2) for k in range(1, 100))
RECALL_LEVELS = tuple(k / 10 for k in range(11))


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def precision(self) -> float:
        return 1.0 if self.tp + self.fp == 0 else self.tp / (self.tp + self.fp)

    @property
    def recall(self) -> float:
        return 1.0 if self.tp + self.fn == 0 else self.tp / (self.tp + self.fn)

    def __add__(self, other: "Confusion") -> "Confusion":
        return Confusion(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)


@dataclass(frozen=True)
class CurvePoint:
    threshold: float
    precision: float
    recall: float
    confusion: Confusion | None = None

    @property
    def f1(self) -> float:
        return f_measure(self.precision, self.recall)


@dataclass
class EvalReport:
    f_max: float
    ap: float
    curve: list[CurvePoint] = field(default_factory=list)

    @property
    def best(self) -> CurvePoint:
        return max(self.curve, key=lambda p: p.f1)

    def to_dict(self) -> dict:
        best = self.best
        return {
            "f_max": self.f_max,
            "ap": self.ap,
            "best_threshold": best.threshold,
            "best_precision": best.precision,
            "best_recall": best.recall,
            "curve": [
                {"threshold": p.threshold, "precision": p.precision, "recall": p.recall, "f1": p.f1}
                for p in self.curve
            ],
        }


def _grid(m) -> np.ndarray:
    return np.asarray(m.grid if isinstance(m, RoadMask) else m)


def confusion(pred, gt, valid=None) -> Confusion:
    p = _grid(pred).astype(bool)
    g = _grid(gt).astype(bool)
    if p.shape != g.shape:
        raise ShapeError(f"prediction {p.shape} and ground truth {g.shape} differ")
    if valid is None:
        v = np.ones_like(g)
    else:
        v = _grid(valid).astype(bool)
        if v.shape != g.shape:
            raise ShapeError(f"valid mask {v.shape} and ground truth {g.shape} differ")
    tp = int(np.count_nonzero(p & g & v))
    fp = int(np.count_nonzero(p & ~g & v))
    fn = int(np.count_nonzero(~p & g & v))
    tn = int(np.count_nonzero(~p & ~g & v))
    return Confusion(tp, fp, fn, tn)


def pr_sweep(prob_source: Callable[[float], object], gt, thresholds=DEFAULT_THRESHOLDS,
             valid=None) -> list[CurvePoint]:
    """Precision/recall at each threshold; ``prob_source(t)`` yields the mask for road >= t."""
    thresholds = list(thresholds)
    if not thresholds:
        raise ConfigurationError("at least one threshold is required")
    curve = []
    for t in thresholds:
        c = confusion(prob_source(t), gt, valid)
        curve.append(CurvePoint(float(t), c.precision, c.recall, c))
    return curve


def threshold_source(prob) -> Callable[[float], np.ndarray]:
    """Mask source that thresholds a fixed probability grid."""
    p = _grid(prob).astype(np.float64)
    return lambda t: p >= t


def f_measure(precision: float, recall: float) -> float:
    s = precision + recall
    return 0.0 if s == 0 else 2 * precision * recall / s


def f_max(curve) -> float:
    if not curve:
        raise ConfigurationError("F-max of an empty curve")
    return max(f_measure(p.precision, p.recall) for p in curve)


def average_precision(curve) -> float:
    """11-point interpolated AP over recall levels 0, 0.1, ..., 1.0."""
    if not curve:
        raise ConfigurationError("AP of an empty curve")
    prec = np.array([p.precision for p in curve], dtype=np.float64)
    rec = np.array([p.recall for p in curve], dtype=np.float64)
    total = 0.0
    for level in RECALL_LEVELS:
        # recalls derived by arithmetic can sit an ulp below a level they attain
        hit = rec >= level - 1e-12
        total += prec[hit].max() if hit.any() else 0.0
    return total / len(RECALL_LEVELS)


def evaluate(prob_source, gt, thresholds=DEFAULT_THRESHOLDS, valid=None) -> EvalReport:
    curve = pr_sweep(prob_source, gt, thresholds, valid)
    return EvalReport(f_max(curve), average_precision(curve), curve)
