"""8-bit fixed-point inference over a packed container.

Layers execute in container order; each weight block is decoded into one
time-shared scratch buffer sized by the largest raw weight block, used by
the kernel, then overwritten by the next layer's decode (biases use a
small sidecar buffer so they never clobber the weights in use). All
arithmetic is integer-exact: accumulators hold sums of int8 products, the
requantization shift is w_frac + in_frac - out_frac (validated >= 0), and
rounding is half-away-from-zero, matching the quantizer.

Matrix products run in float64 (or float32 when the per-output MAC count
is small enough), which represents every intermediate integer exactly and
is far faster than numpy's int32 matmul; results are bit-identical to
integer accumulation.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .codec import (
    KIND_BIAS,
    KIND_CONV2D,
    KIND_FLATTEN,
    KIND_FULLY_CONNECTED,
    KIND_GLOBAL_AVG_POOL,
    KIND_INPUT,
    KIND_MAX_POOL,
    KIND_RELU,
    KIND_RESIDUAL_ADD,
    CorruptContainerError,
    ParsedEntry,
    decode_entry,
    parse_container,
)
from .layers import _conv_cols
from .quantize import QMAX, QMIN, QuantParams, QuantTensor
from .tensor import Shape

INT32_LIMIT = 2**31


@dataclass(frozen=True)
class ScratchPlan:
    weight_scratch_bytes: int  # max raw weight-block size
    activation_bytes: int  # peak of input + output activation buffers


@dataclass
class DecodeStats:
    per_layer_decode_bytes: list[tuple[str, int]] = field(default_factory=list)
    total_decode_bytes: int = 0
    decode_seconds: float = 0.0
    kernel_seconds: float = 0.0
    mac_count: int = 0
    peak_weight_scratch_bytes: int = 0
    bias_scratch_bytes: int = 0


@dataclass(frozen=True)
class FixedPointContext:
    in_frac: int
    w_frac: int
    b_frac: int
    out_frac: int

    @property
    def shift(self) -> int:
        return self.w_frac + self.in_frac - self.out_frac

    @property
    def bias_shift(self) -> int:
        return self.w_frac + self.in_frac - self.b_frac

    def __post_init__(self):
        if self.shift < 0:
            raise ValueError(
                f"invalid fixed-point config: requantization shift {self.shift} < 0"
            )
        if self.bias_shift < 0:
            raise ValueError(
                f"invalid fixed-point config: bias shift {self.bias_shift} < 0"
            )


def round_shift(acc: np.ndarray, shift: int) -> np.ndarray:
    """Arithmetic right shift with half-away-from-zero rounding."""
    acc = acc.astype(np.int64, copy=False)
    if shift == 0:
        return acc
    mag = (np.abs(acc) + (1 << (shift - 1))) >> shift
    return np.sign(acc) * mag


def _saturate(v: np.ndarray) -> np.ndarray:
    return np.clip(v, QMIN, QMAX).astype(np.int8)


def _exact_matmul(a: np.ndarray, b: np.ndarray, macs: int) -> np.ndarray:
    """Integer-exact int8 x int8 matmul via floating point.

    float32 holds integers exactly below 2^24, so it is safe while
    macs * 127^2 stays under that; otherwise float64 (exact below 2^53,
    and our accumulators are bounded by 2^31) is used.
    """
    dtype = np.float32 if macs * 127 * 127 < (1 << 24) else np.float64
    acc = a.astype(dtype) @ b.astype(dtype)
    return acc.astype(np.int64)


def _check_acc(acc: np.ndarray) -> np.ndarray:
    if acc.size and int(np.abs(acc).max()) >= INT32_LIMIT:
        raise OverflowError("accumulator exceeded 32 bits; kernel above MAC budget")
    return acc


def conv2d_q8(
    x: np.ndarray, w: np.ndarray, b: np.ndarray, ctx: FixedPointContext
) -> np.ndarray:
    """Same-padding stride-1 convolution on int8 NHWC input."""
    n, h, wid, _ = x.shape
    cout, kh, kw, cin = w.shape
    cols = _conv_cols(x, kh, kw)
    acc = _exact_matmul(cols, w.reshape(cout, -1).T, kh * kw * cin)
    acc += b.astype(np.int64) << ctx.bias_shift
    _check_acc(acc)
    out = _saturate(round_shift(acc, ctx.shift))
    return out.reshape(n, h, wid, cout)


def fc_q8(x: np.ndarray, w: np.ndarray, b: np.ndarray, ctx: FixedPointContext) -> np.ndarray:
    xf = x.reshape(x.shape[0], -1)
    acc = _exact_matmul(xf, w.reshape(w.shape[0], -1).T, xf.shape[1])
    acc += b.astype(np.int64) << ctx.bias_shift
    _check_acc(acc)
    return _saturate(round_shift(acc, ctx.shift))


def relu_q8(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, np.int8(0))


def max_pool_q8(x: np.ndarray, window: int) -> np.ndarray:
    n, h, w, c = x.shape
    if h % window or w % window:
        raise ValueError(f"max_pool window {window} must divide spatial dims {(h, w)}")
    return x.reshape(n, h // window, window, w // window, window, c).max(axis=(2, 4))


def global_avg_pool_q8(x: np.ndarray) -> np.ndarray:
    """Mean with half-away-from-zero rounding; keeps the input's position."""
    n, h, w, c = x.shape
    cnt = h * w
    s = x.astype(np.int64).sum(axis=(1, 2), keepdims=True)
    q = np.sign(s) * ((2 * np.abs(s) + cnt) // (2 * cnt))
    return _saturate(q)


def add_q8(a: np.ndarray, b: np.ndarray, a_frac: int, b_frac: int) -> np.ndarray:
    if a_frac != b_frac:
        raise ValueError(
            f"add inputs have positions {a_frac} and {b_frac}; "
            "requantization-free add needs equal positions"
        )
    return _saturate(a.astype(np.int16) + b.astype(np.int16))


def _plan_from_entries(entries: list[ParsedEntry]) -> tuple[int, int]:
    weight_max = max(
        (e.raw_len for e in entries if e.kind in (KIND_CONV2D, KIND_FULLY_CONNECTED)),
        default=0,
    )
    bias_max = max((e.raw_len for e in entries if e.kind == KIND_BIAS), default=0)
    return weight_max, bias_max


def run_container(
    blob: bytes, input_q: QuantTensor
) -> tuple[QuantTensor, ScratchPlan, DecodeStats]:
    """Execute every layer of a container on a quantized input batch.

    input_q holds int8 NHWC data (a single sample may omit the batch dim)
    quantized at the container's input position.
    """
    parsed = parse_container(blob)
    entries = parsed.entries
    if not entries or entries[0].kind != KIND_INPUT:
        raise CorruptContainerError("first entry must be the input descriptor")
    if any(e.float_payload for e in entries):
        raise CorruptContainerError("float checkpoint cannot run on the fixed-point path")
    in_entry = entries[0]
    _, h, w, c = in_entry.dims

    x = input_q.qdata.reshape(input_q.shape.dims)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4 or x.shape[1:] != (h, w, c):
        raise ValueError(f"input shape {x.shape} does not match container input {(h, w, c)}")
    if input_q.params.frac_bits != in_entry.act_frac_bits:
        raise ValueError(
            f"input quantized at position {input_q.params.frac_bits}, "
            f"container expects {in_entry.act_frac_bits}"
        )

    weight_max, bias_max = _plan_from_entries(entries)
    scratch = bytearray(weight_max)
    bias_scratch = bytearray(bias_max)
    stats = DecodeStats(bias_scratch_bytes=bias_max)

    cur, cur_frac = x, in_entry.act_frac_bits
    outputs: list[tuple[np.ndarray, int]] = [(cur, cur_frac)]  # index 0 = input
    peak_act = 0
    i = 1
    while i < len(entries):
        e = entries[i]
        prev_nbytes = cur.nbytes
        if e.kind in (KIND_CONV2D, KIND_FULLY_CONNECTED):
            if i + 1 >= len(entries) or entries[i + 1].kind != KIND_BIAS:
                raise CorruptContainerError(
                    f"entry {i} ({e.kind_name}) is missing its bias entry"
                )
            be = entries[i + 1]
            t0 = time.perf_counter()
            wq = decode_entry(blob, e, scratch)
            bq = decode_entry(blob, be, bias_scratch)
            stats.decode_seconds += time.perf_counter() - t0
            stats.per_layer_decode_bytes.append((e.kind_name, e.raw_len + be.raw_len))
            stats.total_decode_bytes += e.raw_len + be.raw_len
            stats.peak_weight_scratch_bytes = max(stats.peak_weight_scratch_bytes, e.raw_len)
            assert stats.peak_weight_scratch_bytes <= weight_max
            ctx = FixedPointContext(cur_frac, e.weight_frac_bits, be.weight_frac_bits, e.act_frac_bits)
            t0 = time.perf_counter()
            if e.kind == KIND_CONV2D:
                cout, kh, kw, cin = e.dims
                cur = conv2d_q8(cur, wq.reshape(cout, kh, kw, cin), bq, ctx)
                stats.mac_count += cur.size * kh * kw * cin
            else:
                dout, _, _, din = e.dims
                cur = fc_q8(cur, wq.reshape(dout, din), bq, ctx)
                stats.mac_count += cur.size * din
            stats.kernel_seconds += time.perf_counter() - t0
            cur_frac = e.act_frac_bits
            i += 2
        else:
            if e.act_frac_bits != cur_frac:
                raise CorruptContainerError(
                    f"entry {i} ({e.kind_name}) declares position {e.act_frac_bits}, "
                    f"input arrives at {cur_frac}"
                )
            t0 = time.perf_counter()
            if e.kind == KIND_RELU:
                cur = relu_q8(cur)
            elif e.kind == KIND_MAX_POOL:
                window, _, stride, _ = e.dims
                if window != stride:
                    raise CorruptContainerError("max_pool supports window == stride only")
                cur = max_pool_q8(cur, window)
            elif e.kind == KIND_GLOBAL_AVG_POOL:
                cur = global_avg_pool_q8(cur)
            elif e.kind == KIND_FLATTEN:
                cur = cur.reshape(cur.shape[0], -1)
            elif e.kind == KIND_RESIDUAL_ADD:
                src = e.dims[0]
                if src + 1 >= len(outputs):
                    raise CorruptContainerError(f"residual source {src} not yet computed")
                other, other_frac = outputs[src + 1]
                cur = add_q8(cur, other, cur_frac, other_frac)
            else:
                raise CorruptContainerError(f"entry {i}: unexpected kind {e.kind_name}")
            stats.kernel_seconds += time.perf_counter() - t0
            i += 1
        outputs.append((cur, cur_frac))
        peak_act = max(peak_act, prev_nbytes + cur.nbytes)

    plan = ScratchPlan(weight_scratch_bytes=weight_max, activation_bytes=peak_act)
    logits = QuantTensor(
        shape=Shape(tuple(cur.shape)),
        qdata=np.ascontiguousarray(cur).reshape(-1),
        params=QuantParams(cur_frac),
    )
    return logits, plan, stats


def evaluate_container(
    blob: bytes, xs: np.ndarray, ys: np.ndarray, batch_size: int = 512
) -> float:
    """Top-1 accuracy of a container over normalized float inputs.

    Inputs are quantized with the container's input position, mirroring
    what a deployed pipeline's preprocessing stage would do.
    """
    from .quantize import quantize_array

    parsed = parse_container(blob)
    f0 = parsed.entries[0].act_frac_bits
    correct = 0
    for s in range(0, xs.shape[0], batch_size):
        xb = xs[s : s + batch_size]
        q = quantize_array(xb, f0).reshape(xb.shape)
        qt = QuantTensor(Shape(tuple(q.shape)), q.reshape(-1), QuantParams(f0))
        logits, _, _ = run_container(blob, qt)
        pred = np.argmax(logits.qdata.reshape(xb.shape[0], -1), axis=1)
        correct += int(np.count_nonzero(pred == ys[s : s + batch_size]))
    return correct / xs.shape[0]
