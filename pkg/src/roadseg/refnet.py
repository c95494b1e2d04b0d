"""Reference forward pass of the 11-layer fully-convolutional road network.

Blobs are channel-first ``[C, rows, cols]`` arrays.  Every convolution is
5x5, stride 1, zero padding 2, so all blobs share one spatial size.
"""

from __future__ import annotations

import numpy as np

from . import fixedpoint as fx
from .errors import ShapeError
from .projection import FeatureTensor
from .weights import KERNEL, LayerWeights, WeightSet

PAD = KERNEL // 2


def _as_blob(t) -> np.ndarray:
    data = t.data if isinstance(t, FeatureTensor) else t
    data = np.asarray(data)
    if data.ndim != 3:
        raise ShapeError(f"blob must be [C, rows, cols], got {data.shape}")
    return data


def _tap_sum(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """sum_{c,u,v} kernel[k,c,u,v] * xpad[c, i+u, j+v] with float64 BLAS."""
    _, rows, cols = x.shape
    xp = np.pad(x.astype(np.float64), ((0, 0), (PAD, PAD), (PAD, PAD)))
    kernel = kernel.astype(np.float64)
    out = np.zeros((kernel.shape[0], rows, cols), dtype=np.float64)
    for u in range(KERNEL):
        for v in range(KERNEL):
            out += np.tensordot(kernel[:, :, u, v], xp[:, u:u + rows, v:v + cols], axes=(1, 0))
    return out


def conv2d_same(blob, lw: LayerWeights) -> np.ndarray:
    x = _as_blob(blob)
    if x.shape[0] != lw.in_channels:
        raise ShapeError(f"input has {x.shape[0]} channels, layer expects {lw.in_channels}")
    return _tap_sum(x, lw.kernel) + lw.bias.astype(np.float64)[:, None, None]


def relu(blob) -> np.ndarray:
    return np.maximum(np.asarray(blob), 0)


def forward(t, ws: WeightSet, keep_blobs: bool = False):
    """Score map ``[2, rows, cols]`` (optionally plus every post-activation blob)."""
    x = _as_blob(t).astype(np.float64)
    ws.validate_chain(x.shape[0])
    blobs = []
    last = len(ws.layers) - 1
    for k, lw in enumerate(ws.layers):
        x = conv2d_same(x, lw)
        if k < last:
            x = relu(x)
        blobs.append(x)
    return (x, blobs) if keep_blobs else x


def road_probability(scores: np.ndarray) -> np.ndarray:
    """Two-class softmax probability of channel 1 (road)."""
    s0 = np.asarray(scores[0], dtype=np.float64)
    s1 = np.asarray(scores[1], dtype=np.float64)
    m = np.maximum(s0, s1)
    e0 = np.exp(s0 - m)
    e1 = np.exp(s1 - m)
    return e1 / (e0 + e1)


def argmax_labels(scores: np.ndarray) -> np.ndarray:
    """Road where the road score strictly exceeds the not-road score."""
    return np.asarray(scores[1]) > np.asarray(scores[0])


# fixed-point direct convolution: the bit-exact oracle of the streaming engine

def conv2d_same_codes(codes: np.ndarray, ql: fx.QuantizedLayer) -> np.ndarray:
    """Direct fixed-point convolution over all input channels at once.

    Each output sum has at most ``in * 25`` terms of magnitude <= 2**30, far
    below 2**53, so float64 accumulation is exact in any order.
    """
    x = _as_blob(codes)
    if x.shape[0] != ql.in_channels:
        raise ShapeError(f"input has {x.shape[0]} channels, layer expects {ql.in_channels}")
    if ql.in_channels * KERNEL * KERNEL * 2**30 >= 2**53:
        raise ShapeError("too many input channels for exact float64 accumulation")
    acc = np.rint(_tap_sum(x, ql.kernel)).astype(np.int64)
    return fx.writeback(acc, ql.out_q, ql.weight_q, relu=ql.relu,
                        bias=ql.bias[:, None, None], in_q=ql.in_q)


def forward_quantized(t, ws: WeightSet, qcfg: fx.QuantConfig | None = None) -> np.ndarray:
    """Fixed-point forward pass; returns the int16 score codes ``[2, rows, cols]``."""
    qcfg = qcfg or fx.QuantConfig()
    x = _as_blob(t)
    ws.validate_chain(x.shape[0])
    codes = fx.quantize(x, qcfg.input_q)
    for ql in fx.quantize_network(ws, qcfg):
        codes = conv2d_same_codes(codes, ql)
    return codes
