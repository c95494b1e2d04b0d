"""16-bit fixed-point codes, exact wide accumulation and the single rounding point.

Every stored value (feature map pixel, weight) is a signed 16-bit code with a
configurable number of fraction bits.  Products of a feature code and a weight
code are summed exactly in a 48-bit accumulator; the only rounding of the
datapath happens in :func:`writeback`, which uses round-half-to-even.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

WORD_BITS = 16
CODE_MIN = -(1 << (WORD_BITS - 1))
CODE_MAX = (1 << (WORD_BITS - 1)) - 1
ACCUM_BITS = 48
ACCUM_MIN = -(1 << (ACCUM_BITS - 1))
ACCUM_MAX = (1 << (ACCUM_BITS - 1)) - 1
MAX_SUMMANDS = 1 << 17


@dataclass(frozen=True)
class QFormat:
    frac_bits: int
    word_bits: int = WORD_BITS

    def __post_init__(self):
        if self.word_bits != WORD_BITS:
            raise ConfigurationError(f"only {WORD_BITS}-bit words are modeled")
        if not 0 <= self.frac_bits < self.word_bits:
            raise ConfigurationError(f"frac_bits must be in [0, {self.word_bits}), got {self.frac_bits}")

    @property
    def scale(self) -> float:
        return float(1 << self.frac_bits)

    @property
    def lsb(self) -> float:
        return 2.0 ** -self.frac_bits

    @property
    def max_value(self) -> float:
        return CODE_MAX / self.scale

    @property
    def min_value(self) -> float:
        return CODE_MIN / self.scale


FEATURE_Q = QFormat(8)
WEIGHT_Q = QFormat(14)
# the input tensor carries the column index (0..255), which Q7.8 cannot hold
INPUT_Q = QFormat(7)


def quantize(x, q: QFormat = FEATURE_Q):
    """Real(s) to 16-bit codes: scale, round half to even, saturate.

    Scalars give a Python int, arrays an int16 array.
    """
    scaled = np.rint(np.asarray(x, dtype=np.float64) * q.scale)
    codes = np.clip(np.nan_to_num(scaled), CODE_MIN, CODE_MAX).astype(np.int16)
    return int(codes) if codes.ndim == 0 else codes


def dequantize(c, q: QFormat = FEATURE_Q):
    out = np.asarray(c, dtype=np.float64) / q.scale
    return float(out) if out.ndim == 0 else out


def quantize_accum(x, frac_bits: int):
    """Real(s) to accumulator-domain integers (round half to even, 48-bit saturation)."""
    scaled = np.rint(np.asarray(x, dtype=np.float64) * 2.0**frac_bits)
    out = np.clip(scaled, ACCUM_MIN, ACCUM_MAX).astype(np.int64)
    return int(out) if out.ndim == 0 else out


def check_accum(a) -> None:
    a = np.asarray(a)
    if a.size and (a.min() < ACCUM_MIN or a.max() > ACCUM_MAX):
        raise OverflowError("accumulator exceeds 48 bits")


def mac_reduce(products) -> int:
    """Exact sum of 32-bit products in the 48-bit accumulator.

    With at most 2**17 summands of magnitude at most 2**30 the sum stays below
    2**47, so there is no intermediate saturation and the order is irrelevant.
    """
    products = [int(p) for p in products]
    if len(products) > MAX_SUMMANDS:
        raise ValueError(f"at most {MAX_SUMMANDS} products per reduction, got {len(products)}")
    total = sum(products)
    check_accum(total)
    return total


def adder_tree(partials: np.ndarray, axis: int = 0) -> np.ndarray:
    """Exact elementwise reduction of integer partial-sum planes along ``axis``."""
    partials = np.asarray(partials)
    if partials.dtype.kind not in "iu":
        raise TypeError("adder tree operands must be integers")
    total = partials.astype(np.int64).sum(axis=axis)
    check_accum(total)
    return total


def round_shift(a, shift: int):
    """``a / 2**shift`` rounded half to even, exact for int64 input."""
    a = np.asarray(a, dtype=np.int64)
    if shift <= 0:
        return a << -shift
    q = a >> shift
    rem = a - (q << shift)
    half = np.int64(1) << (shift - 1)
    up = (rem > half) | ((rem == half) & ((q & 1) == 1))
    return q + up


def writeback(a, feat_q: QFormat = FEATURE_Q, weight_q: QFormat = WEIGHT_Q, *,
              relu: bool = False, bias=0, in_q: QFormat | None = None, stats: dict | None = None):
    """Accumulator value(s) to stored feature codes.

    ``bias`` must already be in the accumulator domain (``in_frac + weight_frac``
    fraction bits).  The sum is rescaled to ``feat_q`` with round-half-to-even,
    ReLU-clamped if requested, and saturated to 16 bits.  ``in_q`` is the
    format of the layer input and defaults to ``feat_q``.  If ``stats`` is
    given, ``stats["saturated"]`` is incremented by the number of clamped codes.
    """
    in_q = in_q or feat_q
    shift = in_q.frac_bits + weight_q.frac_bits - feat_q.frac_bits
    acc = np.asarray(a, dtype=np.int64) + np.asarray(bias, dtype=np.int64)
    out = round_shift(acc, shift)
    if relu:
        out = np.maximum(out, 0)
    if stats is not None:
        stats["saturated"] = stats.get("saturated", 0) + int(np.count_nonzero((out > CODE_MAX) | (out < CODE_MIN)))
    out = np.clip(out, CODE_MIN, CODE_MAX).astype(np.int16)
    return int(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class QuantConfig:
    """Q-formats of one fixed-point network evaluation.

    ``input`` is the format of the quantized input tensor; ``None`` means
    "same as the feature maps".
    """

    feature: QFormat = FEATURE_Q
    weight: QFormat = WEIGHT_Q
    input: QFormat | None = INPUT_Q

    @property
    def input_q(self) -> QFormat:
        return self.input or self.feature

    def layer_input_q(self, layer: int) -> QFormat:
        return self.input_q if layer == 0 else self.feature


@dataclass
class QuantizedLayer:
    kernel: np.ndarray  # int16 [out, in, 5, 5]
    bias: np.ndarray  # int64 [out], accumulator domain
    relu: bool
    in_q: QFormat
    out_q: QFormat
    weight_q: QFormat

    @property
    def out_channels(self) -> int:
        return self.kernel.shape[0]

    @property
    def in_channels(self) -> int:
        return self.kernel.shape[1]


def quantize_layer(lw, in_q: QFormat, out_q: QFormat, weight_q: QFormat, relu: bool) -> QuantizedLayer:
    return QuantizedLayer(
        kernel=quantize(lw.kernel, weight_q),
        bias=quantize_accum(lw.bias, in_q.frac_bits + weight_q.frac_bits),
        relu=relu,
        in_q=in_q,
        out_q=out_q,
        weight_q=weight_q,
    )


def quantize_network(ws, qcfg: QuantConfig | None = None) -> list[QuantizedLayer]:
    """Quantize every layer; all but the last carry a ReLU."""
    qcfg = qcfg or QuantConfig()
    n = len(ws.layers)
    return [
        quantize_layer(lw, qcfg.layer_input_q(k), qcfg.feature, qcfg.weight, relu=k < n - 1)
        for k, lw in enumerate(ws.layers)
    ]
