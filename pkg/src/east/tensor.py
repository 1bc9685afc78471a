"""Dense tensors stored in channel-last linear order.

Weight tensors use the dimension order (out_channels, height, width,
in_channels), so a plain C-order flattening already places the in-channel
dimension fastest-varying. Storage is the flat array itself; flattening is
a zero-cost view and group boundaries are physical byte ranges.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Shape:
    """Tensor shape, at most 4 dims, every dim >= 1."""

    dims: tuple[int, ...]

    def __post_init__(self):
        if not (1 <= len(self.dims) <= 4):
            raise ValueError(f"shape must have 1..4 dims, got {self.dims}")
        if any(int(d) < 1 for d in self.dims):
            raise ValueError(f"all dims must be >= 1, got {self.dims}")
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))

    @property
    def element_count(self) -> int:
        return math.prod(self.dims)


class Tensor:
    """Immutable float32 tensor, pre-linearized channel-last.

    `data` is the 1-D storage; the last dim of `shape` varies fastest.
    """

    __slots__ = ("shape", "data")

    def __init__(self, shape: Shape, data: np.ndarray):
        data = np.asarray(data, dtype=np.float32).reshape(-1)
        if data.size != shape.element_count:
            raise ValueError(
                f"data length {data.size} != element count {shape.element_count}"
            )
        if not np.all(np.isfinite(data)):
            raise ValueError("tensor values must be finite")
        data.flags.writeable = False
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "data", data)

    def __setattr__(self, name, value):
        raise AttributeError("Tensor is immutable")

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "Tensor":
        """Build from an N-D array laid out in semantic (channel-last) order."""
        arr = np.asarray(arr, dtype=np.float32)
        return cls(Shape(tuple(arr.shape)), np.ascontiguousarray(arr).reshape(-1))

    def reshaped(self) -> np.ndarray:
        """The N-D (read-only) view of the flat storage."""
        return self.data.reshape(self.shape.dims)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Tensor)
            and self.shape == other.shape
            and np.array_equal(self.data, other.data)
        )


def flatten_channel_last(t: Tensor) -> np.ndarray:
    """1-D view with the in-channel dim fastest-varying.

    Storage is already channel-last, so this is the identity view; a
    reshape of the result reproduces the tensor exactly.
    """
    return t.data


def l2_norm(segment: np.ndarray) -> float:
    """sqrt(sum of squares) of a non-empty 1-D segment."""
    segment = np.asarray(segment)
    if segment.size == 0:
        raise ValueError("empty group")
    return float(np.sqrt(np.sum(segment.astype(np.float64) ** 2)))
