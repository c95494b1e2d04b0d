"""Network weights: container types, the LRSW file format and seeded generation.

LRSW layout (all little-endian)::

    b"LRSW"  u32 version=1  u32 n_layers
    per layer: u32 in  u32 out  u32 kh=5  u32 kw=5
               f32 kernel[out][in][kh][kw]
               f32 bias[out]
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, ShapeError

KERNEL = 5
NUM_LAYERS = 11
INPUT_CHANNELS = 16
HIDDEN_CHANNELS = 64
OUTPUT_CHANNELS = 2

MAGIC = b"LRSW"
VERSION = 1
_HEADER = struct.Struct("<4sII")
_LAYER_HEADER = struct.Struct("<IIII")

_GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


@dataclass
class LayerWeights:
    kernel: np.ndarray  # float32 [out, in, 5, 5]
    bias: np.ndarray  # float32 [out]

    def __post_init__(self):
        self.kernel = np.asarray(self.kernel, dtype=np.float32)
        self.bias = np.asarray(self.bias, dtype=np.float32)
        if self.kernel.ndim != 4 or self.kernel.shape[2:] != (KERNEL, KERNEL):
            raise ShapeError(f"kernel must be [out, in, 5, 5], got {self.kernel.shape}")
        if self.bias.shape != (self.kernel.shape[0],):
            raise ShapeError(f"bias shape {self.bias.shape} does not match {self.kernel.shape[0]} outputs")

    @property
    def out_channels(self) -> int:
        return self.kernel.shape[0]

    @property
    def in_channels(self) -> int:
        return self.kernel.shape[1]


@dataclass
class WeightSet:
    layers: list[LayerWeights]

    def __len__(self) -> int:
        return len(self.layers)

    def __iter__(self):
        return iter(self.layers)

    def __getitem__(self, i) -> LayerWeights:
        return self.layers[i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, WeightSet):
            return NotImplemented
        if len(self) != len(other):
            return False
        return all(
            a.kernel.shape == b.kernel.shape
            and a.kernel.tobytes() == b.kernel.tobytes()
            and a.bias.tobytes() == b.bias.tobytes()
            for a, b in zip(self.layers, other.layers)
        )

    def shapes(self) -> list[tuple[int, int]]:
        return [(lw.in_channels, lw.out_channels) for lw in self.layers]

    def validate(self, in_channels: int = INPUT_CHANNELS) -> None:
        """Check the architecture: chained shapes, 11 layers, 16 in, 2 out."""
        if len(self.layers) != NUM_LAYERS:
            raise ShapeError(f"expected {NUM_LAYERS} layers, got {len(self.layers)}")
        self.validate_chain(in_channels)
        if self.layers[-1].out_channels != OUTPUT_CHANNELS:
            raise ShapeError(f"last layer must have {OUTPUT_CHANNELS} outputs")
        for lw in self.layers[:-1]:
            if lw.out_channels != HIDDEN_CHANNELS:
                raise ShapeError(f"hidden layers must have {HIDDEN_CHANNELS} outputs")

    def validate_chain(self, in_channels: int) -> None:
        """Only check that consecutive layer shapes connect."""
        if not self.layers:
            raise ShapeError("weight set has no layers")
        expected = in_channels
        for k, lw in enumerate(self.layers):
            if lw.in_channels != expected:
                raise ShapeError(f"layer {k + 1} expects {lw.in_channels} inputs, receives {expected}")
            expected = lw.out_channels


def architecture(
    in_channels: int = INPUT_CHANNELS,
    hidden: int = HIDDEN_CHANNELS,
    out_channels: int = OUTPUT_CHANNELS,
    num_layers: int = NUM_LAYERS,
) -> list[tuple[int, int]]:
    """(in, out) channel pairs of the road-segmentation network."""
    dims = [in_channels] + [hidden] * (num_layers - 1) + [out_channels]
    return list(zip(dims[:-1], dims[1:]))


def splitmix64(seed: int, count: int) -> np.ndarray:
    """First ``count`` outputs of SplitMix64 seeded with ``seed`` (uint64)."""
    # state_k = seed + k * gamma, so the sequence vectorizes without a loop
    with np.errstate(over="ignore"):
        k = np.arange(1, count + 1, dtype=np.uint64)
        z = np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + k * np.uint64(_GOLDEN_GAMMA)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        return z ^ (z >> np.uint64(31))


def weight_bound(in_channels: int) -> float:
    return float(np.sqrt(3.0 / (KERNEL * KERNEL * in_channels)))


def generate_random_weights(seed: int, shapes: list[tuple[int, int]] | None = None) -> WeightSet:
    """Deterministic uniform weights in [-b, b], b = sqrt(3 / (25 * in)).

    Each draw ``u`` maps to ``f = (u >> 11) * 2**-53`` and ``w = (2f - 1) * b``
    in float64, then to float32; a float32 value that rounds past ``b`` is
    stepped one ulp toward zero.  Draws run in layer, out, in, row, col order.
    Biases are zero.
    """
    shapes = shapes or architecture()
    total = sum(o * i * KERNEL * KERNEL for i, o in shapes)
    draws = splitmix64(seed, total)
    unit = (draws >> np.uint64(11)).astype(np.float64) * 2.0**-53
    layers, offset = [], 0
    for cin, cout in shapes:
        n = cout * cin * KERNEL * KERNEL
        b = weight_bound(cin)
        w64 = (2.0 * unit[offset:offset + n] - 1.0) * b
        w32 = w64.astype(np.float32)
        over = np.abs(w32.astype(np.float64)) > b
        w32[over] = np.nextafter(w32[over], np.float32(0))
        layers.append(LayerWeights(w32.reshape(cout, cin, KERNEL, KERNEL), np.zeros(cout, np.float32)))
        offset += n
    return WeightSet(layers)


def encode_weights(ws: WeightSet) -> bytes:
    parts = [_HEADER.pack(MAGIC, VERSION, len(ws.layers))]
    for lw in ws.layers:
        parts.append(_LAYER_HEADER.pack(lw.in_channels, lw.out_channels, KERNEL, KERNEL))
        parts.append(np.ascontiguousarray(lw.kernel, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(lw.bias, dtype="<f4").tobytes())
    return b"".join(parts)


def decode_weights(data: bytes) -> WeightSet:
    if len(data) < _HEADER.size:
        raise FormatError("weight file truncated in header")
    magic, version, count = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"bad weight-file magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"unsupported weight-file version {version}")
    offset = _HEADER.size
    layers = []
    for k in range(count):
        if len(data) < offset + _LAYER_HEADER.size:
            raise FormatError(f"weight file truncated in header of layer {k + 1}")
        cin, cout, kh, kw = _LAYER_HEADER.unpack_from(data, offset)
        offset += _LAYER_HEADER.size
        if (kh, kw) != (KERNEL, KERNEL):
            raise FormatError(f"layer {k + 1}: kernel {kh}x{kw} unsupported, expected 5x5")
        n = cout * cin * kh * kw
        need = 4 * (n + cout)
        if len(data) < offset + need:
            raise FormatError(f"weight file truncated in payload of layer {k + 1}")
        kernel = np.frombuffer(data, dtype="<f4", count=n, offset=offset).reshape(cout, cin, kh, kw)
        bias = np.frombuffer(data, dtype="<f4", count=cout, offset=offset + 4 * n)
        offset += need
        layers.append(LayerWeights(kernel.astype(np.float32), bias.astype(np.float32)))
    if offset != len(data):
        raise FormatError(f"{len(data) - offset} trailing bytes after last layer")
    return WeightSet(layers)


def save_weights(ws: WeightSet, path) -> None:
    Path(path).write_bytes(encode_weights(ws))


def load_weights(path) -> WeightSet:
    return decode_weights(Path(path).read_bytes())
