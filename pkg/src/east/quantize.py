"""Binary-point (power-of-two scale) 8-bit quantization.

A tensor is mapped to signed 8-bit integers q = round(x * 2^f) with f the
fractional-bit count; the representable range is [-128/2^f, 127/2^f].
Rounding is half-away-from-zero and the fixed-point position f is chosen
per tensor by exhaustive mean-squared-error minimization. Activation
positions come from forward passes over a small calibration set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Shape, Tensor

BIT_WIDTH = 8
QMIN = -128
QMAX = 127
FRAC_BITS_MIN = -8
FRAC_BITS_MAX = 14


@dataclass(frozen=True)
class QuantParams:
    frac_bits: int
    bit_width: int = BIT_WIDTH

    def __post_init__(self):
        if self.bit_width != BIT_WIDTH:
            raise ValueError("only 8-bit quantization is supported")
        if not (FRAC_BITS_MIN <= self.frac_bits <= FRAC_BITS_MAX):
            raise ValueError(
                f"frac_bits must be in [{FRAC_BITS_MIN}, {FRAC_BITS_MAX}], got {self.frac_bits}"
            )

    @property
    def scale(self) -> float:
        return 2.0 ** self.frac_bits


@dataclass(frozen=True)
class QuantTensor:
    shape: Shape
    qdata: np.ndarray
    params: QuantParams

    def __post_init__(self):
        q = np.asarray(self.qdata, dtype=np.int8).reshape(-1)
        if q.size != self.shape.element_count:
            raise ValueError("qdata length != shape element count")
        q.flags.writeable = False
        object.__setattr__(self, "qdata", q)

    def payload_bytes(self) -> bytes:
        return self.qdata.tobytes()


def round_half_away(x: np.ndarray) -> np.ndarray:
    """Round-half-away-from-zero (np.round rounds half to even)."""
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantize_array(values: np.ndarray, f: int) -> np.ndarray:
    """clamp(round_half_away(x * 2^f), -128, 127) as a flat int8 array."""
    QuantParams(frac_bits=f)  # range check
    scaled = np.asarray(values).reshape(-1).astype(np.float64) * (2.0 ** f)
    return np.clip(round_half_away(scaled), QMIN, QMAX).astype(np.int8)


def quantize(t: Tensor, f: int) -> QuantTensor:
    """q_i = clamp(round_half_away(x_i * 2^f), -128, 127)."""
    return QuantTensor(shape=t.shape, qdata=quantize_array(t.data, f), params=QuantParams(frac_bits=f))


def dequantize(q: QuantTensor) -> Tensor:
    """x_i = q_i / 2^f."""
    return Tensor(q.shape, q.qdata.astype(np.float32) / np.float32(q.params.scale))


def _mse_for_frac_bits(data: np.ndarray, f: int) -> float:
    scale = 2.0 ** f
    q = np.clip(round_half_away(data * scale), QMIN, QMAX)
    err = data - q / scale
    return float(np.mean(err * err))


def choose_frac_bits(values: np.ndarray | Tensor) -> int:
    """argmin over f of the quantization MSE; ties break toward smaller f."""
    data = values.data if isinstance(values, Tensor) else np.asarray(values).reshape(-1)
    if data.size == 0:
        raise ValueError("cannot choose frac bits for an empty tensor")
    data = data.astype(np.float64)
    if not np.all(np.isfinite(data)):
        raise ValueError("values must be finite")
    best_f = FRAC_BITS_MIN
    best_mse = np.inf
    for f in range(FRAC_BITS_MIN, FRAC_BITS_MAX + 1):
        mse = _mse_for_frac_bits(data, f)
        if mse < best_mse:
            best_mse = mse
            best_f = f
    return best_f


def choose_net_fracs(net) -> tuple[dict[int, int], dict[int, int]]:
    """MSE-optimal frac bits for every weight and bias tensor of a network."""
    weight_fracs = {i: choose_frac_bits(net.weights[i].ravel()) for i in net.weighted_indices()}
    bias_fracs = {i: choose_frac_bits(net.biases[i]) for i in net.weighted_indices()}
    return weight_fracs, bias_fracs


def calibrate_activations(net, samples: np.ndarray, max_samples: int = 100) -> list[QuantParams]:
    """Per-layer activation QuantParams from float forward passes.

    Returns len(net.layers) + 1 entries: index 0 is the network input, entry
    i+1 the output of layer i. Statistics pool the first `max_samples`
    calibration samples in their given order.
    """
    from .layers import forward  # local import: layers is a heavier module

    samples = np.asarray(samples, dtype=np.float32)
    if samples.size == 0 or samples.shape[0] == 0:
        raise ValueError("calibration sample set is empty")
    samples = samples[:max_samples]
    acts = forward(net, samples)
    return [QuantParams(frac_bits=choose_frac_bits(a.reshape(-1))) for a in acts]
