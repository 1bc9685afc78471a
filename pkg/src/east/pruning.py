"""Magnitude and group pruning over flattened weight arrays.

Group pruning removes whole runs of `group_size` consecutive weights from
the channel-last flattened tensor, lowest l2-norm groups first, so zeros
land in contiguous byte ranges the encoder can match. Biases are never
pruned.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor


@dataclass(frozen=True)
class SparsityTarget:
    fraction: float

    def __post_init__(self):
        if not (0.0 <= self.fraction <= 1.0):
            raise ValueError(f"sparsity fraction must be in [0,1], got {self.fraction}")


@dataclass(frozen=True)
class PruneMask:
    """Binary keep mask plus the group size used to build it.

    With group_size g, positions [k*g, (k+1)*g) are all kept or all pruned
    for every group k (the final group may be shorter).
    """

    keep: np.ndarray
    group_size: int

    def __post_init__(self):
        keep = np.asarray(self.keep, dtype=np.uint8).reshape(-1)
        if keep.size == 0:
            raise ValueError("mask must be non-empty")
        if self.group_size < 1:
            raise ValueError("group_size must be >= 1")
        keep.flags.writeable = False
        object.__setattr__(self, "keep", keep)
        g = self.group_size
        if g > 1:
            n_groups = -(-keep.size // g)
            pad = n_groups * g - keep.size
            padded = np.concatenate([keep, np.repeat(keep[-1], pad)]) if pad else keep
            rows = padded.reshape(n_groups, g)
            if np.any(rows.any(axis=1) != rows.all(axis=1)):
                raise ValueError("mask has a partially pruned group")

    @property
    def size(self) -> int:
        return int(self.keep.size)


def sparsity_of(m: PruneMask) -> float:
    """Fraction of pruned positions, #zeros / N."""
    return float(np.count_nonzero(m.keep == 0) / m.keep.size)


def magnitude_prune(flat: np.ndarray, target: SparsityTarget) -> PruneMask:
    """Prune the floor(target * N) smallest weights by |value|.

    Ties break toward the lower index (stable sort), group_size = 1.
    """
    flat = np.asarray(flat).reshape(-1)
    if flat.size == 0:
        raise ValueError("cannot prune an empty array")
    n_prune = int(np.floor(target.fraction * flat.size))
    order = np.argsort(np.abs(flat), kind="stable")
    keep = np.ones(flat.size, dtype=np.uint8)
    keep[order[:n_prune]] = 0
    return PruneMask(keep=keep, group_size=1)


def group_prune(flat: np.ndarray, target: SparsityTarget, gs: int) -> PruneMask:
    """Prune whole consecutive groups of `gs` weights, lowest l2 norm first.

    Groups are pruned in ascending norm order (ties by lower group index)
    until the pruned-element count reaches floor(target * N); the achieved
    sparsity is therefore the smallest whole-group sparsity >= target. The
    final group may be shorter than `gs` and competes with its own norm.
    """
    flat = np.asarray(flat).reshape(-1)
    if flat.size == 0:
        raise ValueError("cannot prune an empty array")
    if gs < 1:
        raise ValueError("group size must be >= 1")
    n = flat.size
    n_groups = -(-n // gs)
    sq = flat.astype(np.float64) ** 2
    pad = n_groups * gs - n
    if pad:
        sq = np.concatenate([sq, np.zeros(pad)])
    norms_sq = sq.reshape(n_groups, gs).sum(axis=1)
    sizes = np.full(n_groups, gs, dtype=np.int64)
    if pad:
        sizes[-1] = gs - pad

    threshold = int(np.floor(target.fraction * n))
    order = np.argsort(norms_sq, kind="stable")
    if threshold == 0:
        k = 0
    else:
        # smallest number of lowest-norm groups whose total size reaches it
        cum = np.cumsum(sizes[order])
        k = int(np.searchsorted(cum, threshold, side="left")) + 1
    keep = np.ones(n_groups, dtype=np.uint8)
    keep[order[:k]] = 0
    keep = np.repeat(keep, gs)[:n]
    return PruneMask(keep=keep, group_size=gs)


def apply_mask(t: Tensor, m: PruneMask) -> Tensor:
    """Zero the pruned positions of a tensor."""
    if t.data.size != m.size:
        raise ValueError(f"tensor size {t.data.size} != mask size {m.size}")
    return Tensor(t.shape, t.data * m.keep.astype(np.float32))
