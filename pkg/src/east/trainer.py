"""Memory-constrained sparse training loop and baselines.

Three modes share one loop. `east` recomputes group masks at the epoch
end from the schedule's sparsity and group size, `wp` does the same with
the group size pinned to 1, `dense` never prunes. After every mask
recomputation the packed container size is measured; once it reaches the
byte target the masks freeze and remaining epochs fine-tune the survivors.

Masked positions hold exactly 0.0 at every step: gradients and momentum
are silenced through the mask, so a pruned weight can only return when a
later mask recomputation re-selects its group (possible once group
boundaries shift with the group size).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import layers
from .codec import MemoryReport, build_entries, estimate_memory, pack_container
from .data import augment_batch
from .layers import Network, softmax_cross_entropy
from .pruning import SparsityTarget, group_prune, sparsity_of
from .quantize import FRAC_BITS_MIN, calibrate_activations, choose_net_fracs
from .schedule import (
    SPARSITY_CEILING,
    ScheduleConfig,
    ScheduleState,
    advance,
)

MODES = ("east", "wp", "dense")
MAX_MACS_PER_OUTPUT = 1 << 15
DRIFT_SPARSITY_STEP = 0.005


class MemoryConstraintError(RuntimeError):
    """The byte target could not be met within the schedule/epoch budget."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    batch_size: int = 128
    lr0: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0
    mode: str = "east"
    target_bytes: int | None = None
    augment: bool = True
    calibration_samples: int = 100

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode != "dense" and self.target_bytes is None:
            raise ValueError(f"mode {self.mode!r} needs target_bytes")
        if self.target_bytes is not None and self.target_bytes < 1:
            raise ValueError("target_bytes must be positive")


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    lr: float
    train_loss: float
    val_accuracy: float
    sparsity: float
    group_size: int
    estimated_bytes: int
    frozen: bool


@dataclass
class TrainResult:
    net: Network
    logs: list[EpochLog]
    container: bytes
    report: MemoryReport
    freeze_epoch: int | None
    act_fracs: list[int] = field(default_factory=list)
    wall_seconds: float = 0.0


def cosine_lr(e: int, total: int, lr0: float) -> float:
    """lr0 * 0.5 * (1 + cos(pi * e / total))."""
    if not (0 <= e <= total):
        raise ValueError(f"epoch {e} outside [0, {total}]")
    return lr0 * 0.5 * (1.0 + float(np.cos(np.pi * e / total)))


def forward(net: Network, batch: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    """Float forward pass; returns (activations, logits)."""
    acts = layers.forward(net, batch)
    return acts, acts[-1]


def network_sparsity(net: Network) -> float:
    """Fraction of weight positions currently masked out, network-wide."""
    zeros = sum(int(np.count_nonzero(net.masks[i] == 0)) for i in net.weighted_indices())
    return zeros / net.weight_count()


def check_mac_budget(net: Network) -> None:
    """Exported kernels must stay within the 32-bit accumulator contract."""
    for i in net.weighted_indices():
        spec = net.layers[i]
        macs = int(np.prod(spec.weight_shape()[1:]))
        if macs > MAX_MACS_PER_OUTPUT:
            raise ValueError(
                f"layer {i}: {macs} MACs per output exceeds the {MAX_MACS_PER_OUTPUT} bound"
            )


def _sgd_epoch(net, xs, ys, cfg: TrainConfig, lr: float, rng, vel_w, vel_b) -> float:
    n = xs.shape[0]
    order = rng.permutation(n)
    loss_sum = 0.0
    for s in range(0, n, cfg.batch_size):
        idx = order[s : s + cfg.batch_size]
        xb = xs[idx]
        if cfg.augment:
            xb = augment_batch(xb, rng)
        acts = layers.forward(net, xb)
        loss, dlogits = softmax_cross_entropy(acts[-1], ys[idx])
        gw, gb = layers.backward(net, acts, dlogits)
        for i in net.weighted_indices():
            w = net.weights[i].reshape(-1)
            g = gw[i].reshape(-1) * net.masks[i]
            g += cfg.weight_decay * w  # masked weights are 0, so no decay leaks in
            v = vel_w[i]
            v *= cfg.momentum
            v += g
            w -= lr * v
            vb = vel_b[i]
            vb *= cfg.momentum
            vb += gb[i]
            net.biases[i] -= lr * vb
        loss_sum += loss * len(idx)
    return loss_sum / n


def _recompute_masks(net: Network, sparsity: float, group_size: int, vel_w) -> None:
    """Fresh masks from current weights; zeros applied to weights and momentum."""
    target = SparsityTarget(sparsity)
    for i in net.weighted_indices():
        flat = net.weights[i].reshape(-1)
        mask = group_prune(flat, target, group_size)
        keep = mask.keep.astype(np.float32)
        net.masks[i] = keep
        flat *= keep
        vel_w[i] *= keep


def evaluate(model, xs: np.ndarray, ys: np.ndarray, batch_size: int = 512) -> float:
    """Top-1 accuracy. Accepts a float Network or packed container bytes."""
    if isinstance(model, (bytes, bytearray)):
        from .runtime import evaluate_container  # runtime builds on this module's exports

        return evaluate_container(bytes(model), xs, ys, batch_size=batch_size)
    correct = 0
    for s in range(0, xs.shape[0], batch_size):
        logits = layers.forward(model, xs[s : s + batch_size])[-1]
        correct += int(np.count_nonzero(np.argmax(logits, axis=1) == ys[s : s + batch_size]))
    return correct / xs.shape[0]


def effective_act_fracs(
    net: Network, proposed: list[int], weight_fracs: dict[int, int]
) -> list[int]:
    """Final activation positions: calibrated values adjusted so every
    requantization shift w_frac + in_frac - out_frac is >= 0 and weightless
    layers keep their input's position (their kernels never rescale).
    residual_add inputs must agree; there is no rescale pass.

    A layer whose accumulator position in_frac + w_frac falls below the
    quantizer floor has inputs or weights too large for the 8-bit range;
    no legal output or bias position exists for it.
    """
    eff = [proposed[0]]
    for i, spec in enumerate(net.layers):
        in_f = eff[i]
        if spec.has_weights:
            acc_f = in_f + weight_fracs[i]
            if acc_f < FRAC_BITS_MIN:
                raise ValueError(
                    f"layer {i}: accumulator position {acc_f} is below the "
                    f"{FRAC_BITS_MIN} floor; inputs or weights exceed the 8-bit range"
                )
            out_f = min(proposed[i + 1], acc_f)
        elif spec.kind == "residual_add":
            other = eff[spec.source + 1]
            if other != in_f:
                raise ValueError(
                    f"layer {i}: residual inputs have positions {in_f} and {other}; "
                    "requantization-free add needs equal positions"
                )
            out_f = in_f
        else:
            out_f = in_f
        eff.append(out_f)
    return eff


def _pin_all_zero_layers(net: Network, weight_fracs: dict[int, int]) -> dict[int, int]:
    """An all-zero weight tensor quantizes exactly at any position, but the
    all-zero convention (lowest position) would drag every downstream
    activation position to the floor. Position 0 makes the layer behave
    like a weightless one and keeps the bias shift within 32 bits.
    """
    for i in net.weighted_indices():
        if not net.weights[i].any():
            weight_fracs[i] = 0
    return weight_fracs


def export_container(
    net: Network, calib_x: np.ndarray, calibration_samples: int = 100
) -> tuple[bytes, MemoryReport, list[int]]:
    """Quantize, calibrate, and pack the network. Returns (blob, report, act_fracs)."""
    check_mac_budget(net)
    weight_fracs, bias_fracs = choose_net_fracs(net)
    weight_fracs = _pin_all_zero_layers(net, weight_fracs)
    params = calibrate_activations(net, calib_x, calibration_samples)
    act_fracs = effective_act_fracs(net, [p.frac_bits for p in params], weight_fracs)
    bias_fracs = {
        i: min(bias_fracs[i], act_fracs[i] + weight_fracs[i])
        for i in net.weighted_indices()
    }
    entries = build_entries(net, weight_fracs, bias_fracs, act_fracs)
    blob = pack_container(entries)
    report = estimate_memory(net, weight_fracs, bias_fracs)
    return blob, report, act_fracs


def export_float_checkpoint(net: Network, act_fracs: list[int] | None = None) -> bytes:
    """Container-layout checkpoint with uncompressed float32 payloads.

    Calibrated activation positions, when given, ride along in the entry
    table so the checkpoint can later be compressed without a dataset.
    """
    zero_w = {i: 0 for i in net.weighted_indices()}
    return pack_container(
        build_entries(net, zero_w, dict(zero_w), act_fracs, float_payload=True)
    )


def compress_checkpoint(
    blob: bytes,
    target_bytes: int,
    sched: ScheduleConfig | None = None,
    max_steps: int = 2000,
) -> tuple[bytes, float, int]:
    """One-shot compression of a float checkpoint, no retraining.

    Walks the sparsity/group-size schedule over virtual epochs, masking
    the checkpoint's own weights, until the packed container fits.
    Returns (container, sparsity, group_size).
    """
    from .codec import network_from_checkpoint

    if target_bytes <= 0:
        raise ValueError("target_bytes must be positive")
    sched = sched or ScheduleConfig()
    net, stored_act = network_from_checkpoint(blob)
    if not any(stored_act):
        raise ValueError(
            "checkpoint carries no calibrated activation positions; "
            "re-export it from a training run"
        )
    check_mac_budget(net)
    original = {i: net.weights[i].copy() for i in net.weighted_indices()}

    from .schedule import group_size_at, target_sparsity

    for step in range(max_steps):
        sparsity = target_sparsity(sched, step)
        gs = group_size_at(sched, step)
        for i in net.weighted_indices():
            mask = group_prune(original[i].ravel(), SparsityTarget(sparsity), gs)
            keep = mask.keep.astype(np.float32)
            net.masks[i] = keep
            net.weights[i] = (original[i].ravel() * keep).reshape(original[i].shape)
        weight_fracs, bias_fracs = choose_net_fracs(net)
        weight_fracs = _pin_all_zero_layers(net, weight_fracs)
        act_fracs = effective_act_fracs(net, stored_act, weight_fracs)
        bias_fracs = {
            i: min(bias_fracs[i], act_fracs[i] + weight_fracs[i])
            for i in net.weighted_indices()
        }
        report = estimate_memory(net, weight_fracs, bias_fracs)
        if report.total_bytes <= target_bytes:
            out = pack_container(build_entries(net, weight_fracs, bias_fracs, act_fracs))
            return out, network_sparsity(net), gs
        if sparsity >= SPARSITY_CEILING:
            break
    raise MemoryConstraintError(
        f"target {target_bytes} B unreachable by pruning alone; "
        f"smallest size at the sparsity ceiling is {report.total_bytes} B"
    )


def train(
    net: Network,
    data,
    cfg: TrainConfig,
    sched: ScheduleConfig | None = None,
) -> TrainResult:
    """Run the configured mode end to end and export the container.

    `data` provides train_x/train_y/val_x/val_y (normalized float32 NHWC).
    For east/wp the returned container is guaranteed <= cfg.target_bytes;
    MemoryConstraintError is raised when the budget cannot be reached.
    """
    started = time.perf_counter()
    sched = sched or ScheduleConfig()
    rng = np.random.default_rng(cfg.seed)
    state = ScheduleState.initial(sched)
    prune = cfg.mode != "dense"
    vel_w = {i: np.zeros(net.weights[i].size, dtype=np.float32) for i in net.weighted_indices()}
    vel_b = {i: np.zeros_like(net.biases[i]) for i in net.weighted_indices()}
    logs: list[EpochLog] = []

    for epoch in range(cfg.epochs):
        lr = cosine_lr(epoch, cfg.epochs, cfg.lr0)
        loss = _sgd_epoch(net, data.train_x, data.train_y, cfg, lr, rng, vel_w, vel_b)
        if prune and not state.frozen:
            gs = state.current_gs if cfg.mode == "east" else 1
            _recompute_masks(net, state.current_sparsity, gs, vel_w)
        report = estimate_memory(net)
        met = cfg.target_bytes is not None and report.total_bytes <= cfg.target_bytes
        val_acc = evaluate(net, data.val_x, data.val_y)
        logs.append(
            EpochLog(
                epoch=epoch,
                lr=lr,
                train_loss=loss,
                val_accuracy=val_acc,
                sparsity=network_sparsity(net),
                group_size=(state.current_gs if cfg.mode == "east" else 1) if prune else 1,
                estimated_bytes=report.total_bytes,
                frozen=state.frozen,
            )
        )
        if prune:
            state = advance(state, sched, met)

    if prune and cfg.target_bytes is not None and not state.frozen:
        best = min(log.estimated_bytes for log in logs)
        raise MemoryConstraintError(
            f"target {cfg.target_bytes} B unreachable in {cfg.epochs} epochs; "
            f"best achieved size {best} B"
        )

    if prune:
        blob, report, act_fracs, logs = _export_within_budget(
            net, data, cfg, state, rng, vel_w, vel_b, logs
        )
    else:
        blob, report, act_fracs = export_container(net, data.val_x, cfg.calibration_samples)
    return TrainResult(
        net=net,
        logs=logs,
        container=blob,
        report=report,
        freeze_epoch=state.freeze_epoch,
        act_fracs=act_fracs,
        wall_seconds=time.perf_counter() - started,
    )


def _export_within_budget(net, data, cfg, state, rng, vel_w, vel_b, logs):
    """Export, enforcing the byte target on the actual packed file.

    Fine-tuning moves weight values, and block sizes move with them; if
    the packed size drifted above the target, prune 0.5% more at the frozen
    group size and run one recovery epoch, repeating until it fits.
    """
    gs = state.current_gs if cfg.mode == "east" else 1
    sparsity = state.current_sparsity
    epoch = cfg.epochs
    lr = cosine_lr(max(cfg.epochs - 1, 0), cfg.epochs, cfg.lr0)
    while True:
        blob, report, act_fracs = export_container(net, data.val_x, cfg.calibration_samples)
        if cfg.target_bytes is None or len(blob) <= cfg.target_bytes:
            return blob, report, act_fracs, logs
        if sparsity >= SPARSITY_CEILING:
            raise MemoryConstraintError(
                f"target {cfg.target_bytes} B unreachable: {len(blob)} B "
                f"at sparsity ceiling {SPARSITY_CEILING}"
            )
        sparsity = min(SPARSITY_CEILING, sparsity + DRIFT_SPARSITY_STEP)
        _recompute_masks(net, sparsity, gs, vel_w)
        loss = _sgd_epoch(net, data.train_x, data.train_y, cfg, lr, rng, vel_w, vel_b)
        logs = logs + [
            EpochLog(
                epoch=epoch,
                lr=lr,
                train_loss=loss,
                val_accuracy=evaluate(net, data.val_x, data.val_y),
                sparsity=network_sparsity(net),
                group_size=gs,
                estimated_bytes=estimate_memory(net).total_bytes,
                frozen=True,
            )
        ]
        epoch += 1


def train_east(net, data, cfg: TrainConfig, sched: ScheduleConfig | None = None) -> TrainResult:
    if cfg.mode != "east":
        cfg = replace(cfg, mode="east")
    return train(net, data, cfg, sched)


def train_wp(net, data, cfg: TrainConfig, sched: ScheduleConfig | None = None) -> TrainResult:
    if cfg.mode != "wp":
        cfg = replace(cfg, mode="wp")
    return train(net, data, cfg, sched)


def train_dense(net, data, cfg: TrainConfig, sched: ScheduleConfig | None = None) -> TrainResult:
    if cfg.mode != "dense":
        cfg = replace(cfg, mode="dense")
    return train(net, data, cfg, sched)
