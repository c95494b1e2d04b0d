"""Software model of the streaming convolution hardware.

One *pass* streams every input feature map through its own convolution unit:
the plane is written into a zero-padding column RAM, scanned pixel by pixel
through a line buffer (4 lines plus 5 registers) that presents a 5x5 window
per cycle, and multiplied against the unit's 2 kernels.  An adder tree then
fuses the per-unit partial sums into 2 output feature maps, so a layer with
``out`` maps takes ``ceil(out / 2)`` loops.  Layer outputs alternate between
two banks of 64 plane memories.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import fixedpoint as fx
from .errors import ShapeError
from .projection import FeatureTensor, GridSpec
from .weights import KERNEL, WeightSet, architecture

PAD = KERNEL // 2
LINES = KERNEL - 1
UNITS = 64
FILTERS_PER_UNIT = 2
BANKS = 2
DEFAULT_CLOCK_HZ = 350e6
DEFAULT_PIPELINE_LATENCY = 320
_BAND_PIXELS = 512  # simulation tile size, no hardware meaning


def memory_bits(rows: int = 64, cols: int = 256, word_bits: int = fx.WORD_BITS) -> int:
    """Size of one feature-map memory holding an unpadded plane."""
    return rows * cols * word_bits


# -- zero-padding RAM -------------------------------------------------------

@dataclass
class PaddedPlane:
    """Column-slot RAM: ``slots[c]`` holds padded column ``c`` (rows + 4 entries)."""

    slots: np.ndarray

    @property
    def rows(self) -> int:
        return self.slots.shape[1] - 2 * PAD

    @property
    def cols(self) -> int:
        return self.slots.shape[0] - 2 * PAD

    @property
    def padded_shape(self) -> tuple[int, int]:
        """(padded rows, padded cols) of the image view."""
        return self.slots.shape[1], self.slots.shape[0]

    def image(self) -> np.ndarray:
        """Row-major view ``[rows + 4, cols + 4]`` as the scanning circuit sees it."""
        return self.slots.T

    def interior(self) -> np.ndarray:
        return self.image()[PAD:-PAD, PAD:-PAD]

    def scan(self):
        """Pixels in raster order, one per cycle."""
        img = self.image()
        for i in range(img.shape[0]):
            for j in range(img.shape[1]):
                yield img[i, j]


def pad_plane(plane: np.ndarray) -> PaddedPlane:
    plane = np.asarray(plane)
    if plane.ndim != 2:
        raise ShapeError(f"plane must be 2-D, got {plane.shape}")
    rows, cols = plane.shape
    slots = np.zeros((cols + 2 * PAD, rows + 2 * PAD), dtype=plane.dtype)
    # border slots/entries are never written, they stay zero
    slots[PAD:PAD + cols, PAD:PAD + rows] = plane.T
    return PaddedPlane(slots)


def pad_planes(planes: np.ndarray) -> np.ndarray:
    """Vectorized padding of a ``[C, rows, cols]`` stack, returned row-major."""
    return np.pad(planes, ((0, 0), (PAD, PAD), (PAD, PAD)))


# -- line buffer ------------------------------------------------------------

class LineBuffer:
    """Four line stores plus a 5x5 window register array.

    ``push`` accepts one pixel per cycle (a scalar, or an array when several
    units run in lockstep) and returns the window once it covers a full
    5x5 neighborhood, else None.  The first window needs ``4 * width + 5``
    pixels.
    """

    def __init__(self, width: int, lanes: tuple[int, ...] = (), dtype=np.int64):
        if width < KERNEL:
            raise ShapeError(f"line width {width} is narrower than the {KERNEL}-wide window")
        self.width = width
        self.lines = np.zeros((LINES, width, *lanes), dtype=dtype)
        self.window = np.zeros((KERNEL, KERNEL, *lanes), dtype=dtype)
        self.consumed = 0

    @property
    def fill_latency(self) -> int:
        return LINES * self.width + KERNEL

    def push(self, pixel):
        x = self.consumed % self.width
        y = self.consumed // self.width
        column = np.concatenate([self.lines[:, x], np.asarray(pixel, dtype=self.lines.dtype)[None]])
        self.lines[:-1, x] = self.lines[1:, x]
        self.lines[-1, x] = pixel
        self.window[:, :-1] = self.window[:, 1:]
        self.window[:, -1] = column
        self.consumed += 1
        if y >= LINES and x >= KERNEL - 1:
            return self.window.copy()
        return None


def stream_windows(pp: PaddedPlane):
    """Yield ``(i, j, window)`` in row-major output order via the line buffer."""
    rows_p, cols_p = pp.padded_shape
    lb = LineBuffer(cols_p)
    for pixel in pp.scan():
        win = lb.push(pixel)
        if win is not None:
            n = lb.consumed - 1
            yield n // cols_p - LINES, n % cols_p - (KERNEL - 1), win


def window_stack(padded: np.ndarray) -> np.ndarray:
    """All windows of row-major padded planes at once: ``[..., rows, cols, 5, 5]``.

    Same windows, same order, as :func:`stream_windows`.
    """
    return sliding_window_view(padded, (KERNEL, KERNEL), axis=(-2, -1))


# -- convolution units ------------------------------------------------------

def conv_unit_pass(pp: PaddedPlane, k0: np.ndarray, k1: np.ndarray, use_line_buffer: bool = False):
    """Two integer partial-sum planes (int64) for one unit and its two kernels."""
    k = np.stack([np.asarray(k0, dtype=np.int64), np.asarray(k1, dtype=np.int64)])
    if k.shape != (FILTERS_PER_UNIT, KERNEL, KERNEL):
        raise ShapeError("conv unit kernels must be 5x5")
    out = np.zeros((FILTERS_PER_UNIT, pp.rows, pp.cols), dtype=np.int64)
    if use_line_buffer:
        for i, j, win in stream_windows(pp):
            for f in range(FILTERS_PER_UNIT):
                out[f, i, j] = fx.mac_reduce((win * k[f]).ravel())
        return out[0], out[1]
    wins = window_stack(pp.image().astype(np.int64))
    out = np.einsum("ijuv,fuv->fij", wins, k)
    return out[0], out[1]


def _units_pass(windows: np.ndarray, kernels: np.ndarray) -> np.ndarray:
    """Partial sums of all units of one loop: ``[units, 2, pixels]`` int64.

    ``windows`` is ``[units, 25, pixels]`` float64, ``kernels`` int ``[units, 2, 5, 5]``.
    Each partial is an integer below ``25 * 2**30``, exact in float64.
    """
    k = kernels.reshape(kernels.shape[0], FILTERS_PER_UNIT, KERNEL * KERNEL).astype(np.float64)
    return np.matmul(k, windows).astype(np.int64)


# -- schedule / timing ------------------------------------------------------

@dataclass(frozen=True)
class StreamSchedule:
    clock_hz: float = DEFAULT_CLOCK_HZ
    pipeline_latency: int = DEFAULT_PIPELINE_LATENCY
    pass_cycles: int | None = None  # overrides the geometry-derived cost
    overhead_cycles: int = 0  # between consecutive passes
    outputs_per_loop: int = FILTERS_PER_UNIT

    def loops(self, out_channels: int) -> int:
        return math.ceil(out_channels / self.outputs_per_loop)

    def cycles_per_pass(self, rows: int, cols: int) -> int:
        if self.pass_cycles is not None:
            return self.pass_cycles
        return (rows + 2 * PAD) * (cols + 2 * PAD) + self.pipeline_latency


@dataclass
class LayerTiming:
    layer: int
    in_channels: int
    out_channels: int
    loops: int
    cycles: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class CycleReport:
    clock_hz: float
    cycles_per_pass: int
    overhead_cycles: int
    layers: list[LayerTiming] = field(default_factory=list)

    @property
    def passes(self) -> int:
        return sum(lt.loops for lt in self.layers)

    @property
    def cycles_total(self) -> int:
        return sum(lt.cycles for lt in self.layers)

    @property
    def wall_time_s(self) -> float:
        return self.cycles_total / self.clock_hz

    def add(self, layer: int, in_channels: int, out_channels: int, loops: int) -> LayerTiming:
        lt = LayerTiming(layer, in_channels, out_channels, loops,
                         loops * (self.cycles_per_pass + self.overhead_cycles))
        self.layers.append(lt)
        return lt

    def to_dict(self) -> dict:
        return {
            "clock_hz": self.clock_hz,
            "cycles_per_pass": self.cycles_per_pass,
            "overhead_cycles": self.overhead_cycles,
            "passes": self.passes,
            "cycles_total": self.cycles_total,
            "wall_time_s": self.wall_time_s,
            "wall_time_ms": self.wall_time_s * 1e3,
            "layers": [lt.to_dict() for lt in self.layers],
        }


def estimate_timing(sched: StreamSchedule | None = None,
                    arch: list[tuple[int, int]] | None = None,
                    grid: GridSpec | None = None) -> CycleReport:
    """Cycle accounting of a network given as ``(in, out)`` layer shapes."""
    sched = sched or StreamSchedule()
    arch = arch or architecture()
    grid = grid or GridSpec()
    report = CycleReport(sched.clock_hz, sched.cycles_per_pass(grid.rows, grid.cols), sched.overhead_cycles)
    for k, (cin, cout) in enumerate(arch):
        report.add(k + 1, cin, cout, sched.loops(cout))
    return report


# -- plane memories ---------------------------------------------------------

class PlaneBanks:
    """Two banks of 64 plane memories used alternately by consecutive layers."""

    def __init__(self, rows: int, cols: int, planes_per_bank: int = UNITS):
        self.mem = np.zeros((BANKS, planes_per_bank, rows, cols), dtype=np.int16)
        self.valid = np.zeros((BANKS, planes_per_bank), dtype=bool)
        self.peak_live = 0

    def load(self, bank: int, planes: np.ndarray) -> None:
        n = planes.shape[0]
        if n > self.mem.shape[1]:
            raise ShapeError(f"{n} planes do not fit a bank of {self.mem.shape[1]}")
        self.mem[bank, :n] = planes
        self.valid[bank] = False
        self.valid[bank, :n] = True
        self._track()

    def write(self, bank: int, index: int, plane: np.ndarray) -> None:
        self.mem[bank, index] = plane
        self.valid[bank, index] = True
        self._track()

    def read_all(self, bank: int) -> np.ndarray:
        return self.mem[bank, self.valid[bank]]

    def release(self, bank: int) -> None:
        self.valid[bank] = False

    def _track(self) -> None:
        self.peak_live = max(self.peak_live, int(self.valid.sum()))


# -- layer / network --------------------------------------------------------

def layer_pass(codes: np.ndarray, ql: fx.QuantizedLayer, sched: StreamSchedule | None = None,
               report: CycleReport | None = None, layer: int = 1, sink=None, stats: dict | None = None):
    """Run one convolution layer on ``[in, rows, cols]`` int16 codes.

    Returns ``(output codes [out, rows, cols], cycles)``.  ``sink(index, plane)``
    receives each output map as it is written back, in loop order; ``stats``
    collects the writeback saturation count.
    """
    sched = sched or StreamSchedule()
    codes = np.asarray(codes)
    if codes.ndim != 3 or codes.shape[0] != ql.in_channels:
        raise ShapeError(f"layer expects {ql.in_channels} input maps, got shape {codes.shape}")
    if ql.in_channels > UNITS:
        raise ShapeError(f"{ql.in_channels} input maps exceed the {UNITS} conv units")
    cin, rows, cols = codes.shape
    cout = ql.out_channels

    loops = sched.loops(cout)
    per_loop = sched.outputs_per_loop
    schedule = []
    for loop in range(loops):
        ids = np.arange(loop * per_loop, (loop + 1) * per_loop)
        live = ids[ids < cout]
        kernels = np.zeros((cin, per_loop, KERNEL, KERNEL), dtype=np.int64)
        kernels[:, :len(live)] = ql.kernel[live].transpose(1, 0, 2, 3)
        schedule.append((live, kernels))

    # Every loop streams the same padded planes; the simulation walks them in
    # bands of rows and runs all loops per band, which only reorders work on
    # independent pixels and keeps the window stack cache-sized.
    padded = pad_planes(codes.astype(np.float64))
    sums = np.empty((loops, per_loop, rows * cols), dtype=np.int64)
    band = max(1, _BAND_PIXELS // cols)
    for r0 in range(0, rows, band):
        r1 = min(rows, r0 + band)
        win = window_stack(padded[:, r0:r1 + 2 * PAD])
        win = np.ascontiguousarray(win.reshape(cin, (r1 - r0) * cols, KERNEL * KERNEL).transpose(0, 2, 1))
        for loop, (_, kernels) in enumerate(schedule):
            sums[loop, :, r0 * cols:r1 * cols] = fx.adder_tree(_units_pass(win, kernels), axis=0)

    out = np.empty((cout, rows, cols), dtype=np.int16)
    for loop, (live, _) in enumerate(schedule):
        for slot, oc in enumerate(live):
            plane = fx.writeback(sums[loop, slot], ql.out_q, ql.weight_q, relu=ql.relu,
                                 bias=ql.bias[oc], in_q=ql.in_q, stats=stats).reshape(rows, cols)
            out[oc] = plane
            if sink is not None:
                sink(oc, plane)
    if report is None:
        report = CycleReport(sched.clock_hz, sched.cycles_per_pass(rows, cols), sched.overhead_cycles)
    lt = report.add(layer, cin, cout, loops)
    return out, lt.cycles


@dataclass
class StreamResult:
    scores: np.ndarray  # float64 [2, rows, cols]
    codes: np.ndarray  # int16 [2, rows, cols]
    report: CycleReport
    peak_live_planes: int
    saturated: int = 0  # writeback codes clamped to the 16-bit range
    input_saturated: int = 0


def run_streaming(t, ws: WeightSet, sched: StreamSchedule | None = None,
                  qcfg: fx.QuantConfig | None = None) -> StreamResult:
    sched = sched or StreamSchedule()
    qcfg = qcfg or fx.QuantConfig()
    data = t.data if isinstance(t, FeatureTensor) else np.asarray(t)
    if data.ndim != 3:
        raise ShapeError(f"input tensor must be [C, rows, cols], got {data.shape}")
    ws.validate_chain(data.shape[0])
    _, rows, cols = data.shape
    qlayers = fx.quantize_network(ws, qcfg)
    report = CycleReport(sched.clock_hz, sched.cycles_per_pass(rows, cols), sched.overhead_cycles)
    banks = PlaneBanks(rows, cols)

    q_in = qcfg.input_q
    input_saturated = int(np.count_nonzero((data > q_in.max_value) | (data < q_in.min_value)))
    stats = {"saturated": 0}
    src = 0
    banks.load(src, fx.quantize(data, q_in))
    for k, ql in enumerate(qlayers):
        dst = 1 - src
        banks.release(dst)

        def sink(index, plane, dst=dst):
            banks.write(dst, index, plane)

        layer_pass(banks.read_all(src), ql, sched, report, layer=k + 1, sink=sink, stats=stats)
        banks.release(src)
        src = dst
    codes = banks.read_all(src).copy()
    return StreamResult(fx.dequantize(codes, qcfg.feature), codes, report, banks.peak_live,
                        stats["saturated"], input_saturated)


def network_forward_streaming(t, ws: WeightSet, sched: StreamSchedule | None = None,
                              qcfg: fx.QuantConfig | None = None):
    """Fixed-point streaming forward pass: ``(score map, CycleReport)``."""
    res = run_streaming(t, ws, sched, qcfg)
    return res.scores, res.report


# -- float-reference error bound --------------------------------------------

@dataclass
class ErrorBound:
    """Bounds on |fixed-point score - float score|, elementwise ``[2, rows, cols]``.

    ``scores`` is a worst-case bound that holds whenever no stored value
    saturated (input in range and ``StreamResult.saturated == 0``).  ``rms``
    is the standard deviation predicted by treating every rounding error as
    independent and uniform; it is an estimate, not a guarantee.
    """

    scores: np.ndarray
    rms: np.ndarray
    per_layer: list[float]
    per_layer_rms: list[float]
    input_in_range: bool


def error_bound(t, ws: WeightSet, qcfg: fx.QuantConfig | None = None) -> ErrorBound:
    """Propagate quantization error through the layers (see ``docs/quantization_error.md``).

    With float reference ``y = W*x + b`` and fixed point ``y' = W'*x' + b'``
    (``*`` the zero-padded 5x5 convolution)::

        |y' - y| <= |W'| * |x' - x| + |W' - W| * |x| + |b' - b| + lsb / 2

    After ReLU the error stays ``e`` where ``y >= 0`` and shrinks to
    ``max(0, y + e)`` where ``y < 0``.
    """
    from .refnet import _tap_sum, forward

    qcfg = qcfg or fx.QuantConfig()
    data = t.data if isinstance(t, FeatureTensor) else np.asarray(t, dtype=np.float64)
    pre, blobs = _pre_activations(data, ws, forward)
    inputs = [data] + blobs[:-1]

    q_in = qcfg.input_q
    err = np.abs(fx.dequantize(fx.quantize(data, q_in), q_in) - data)
    var = np.full_like(data, q_in.lsb ** 2 / 12)
    in_range = bool(np.all((data <= q_in.max_value) & (data >= q_in.min_value)))
    per_layer, per_layer_rms = [], []
    for k, (lw, ql) in enumerate(zip(ws.layers, fx.quantize_network(ws, qcfg))):
        dw = fx.dequantize(ql.kernel, ql.weight_q) - lw.kernel.astype(np.float64)
        wq = fx.dequantize(ql.kernel, ql.weight_q)
        db = ql.bias / 2.0 ** (ql.in_q.frac_bits + ql.weight_q.frac_bits) - lw.bias.astype(np.float64)
        x = inputs[k]
        err = (_tap_sum(err, np.abs(wq)) + _tap_sum(np.abs(x), np.abs(dw))
               + np.abs(db)[:, None, None] + ql.out_q.lsb / 2)
        err += 1e-9 * (1.0 + np.abs(pre[k]))  # float64 rounding of the reference itself
        var = (_tap_sum(var, wq ** 2) + _tap_sum(x ** 2, dw ** 2)
               + (db ** 2)[:, None, None] + ql.out_q.lsb ** 2 / 12)
        if ql.relu:
            err = np.where(pre[k] >= 0, err, np.maximum(0.0, pre[k] + err))
            var = np.where(pre[k] > 0, var, 0.0)
        per_layer.append(float(err.max()))
        per_layer_rms.append(float(np.sqrt(var.mean())))
    return ErrorBound(err, np.sqrt(var), per_layer, per_layer_rms, in_range)


def _pre_activations(data, ws, forward):
    from .refnet import conv2d_same, relu

    pre, blobs = [], []
    x = np.asarray(data, dtype=np.float64)
    last = len(ws.layers) - 1
    for k, lw in enumerate(ws.layers):
        y = conv2d_same(x, lw)
        pre.append(y)
        x = relu(y) if k < last else y
        blobs.append(x)
    return pre, blobs
