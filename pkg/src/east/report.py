"""CSV logs and rendered figures for training runs and target sweeps.

CSV is the interchange format; every figure is rendered from the same
rows the CSV holds, so plots can always be reproduced downstream.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .trainer import EpochLog

EPOCH_COLUMNS = ("epoch", "loss", "val_acc", "sparsity", "gs", "bytes", "frozen")
SWEEP_COLUMNS = ("M_t", "CR", "S_wp", "S_east", "A_wp", "A_east")


@dataclass(frozen=True)
class SweepRow:
    target_bytes: int
    compression_ratio: float  # dense quantized size / target
    sparsity_wp: float
    sparsity_east: float
    accuracy_wp: float
    accuracy_east: float


def write_epoch_csv(path: str | Path, logs: list[EpochLog]) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(EPOCH_COLUMNS)
        for l in logs:
            w.writerow(
                [
                    l.epoch,
                    f"{l.train_loss:.6f}",
                    f"{l.val_accuracy:.6f}",
                    f"{l.sparsity:.6f}",
                    l.group_size,
                    l.estimated_bytes,
                    int(l.frozen),
                ]
            )
    return path


def read_epoch_csv(path: str | Path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return [dict(row) for row in csv.DictReader(fh)]


def write_sweep_csv(path: str | Path, rows: list[SweepRow]) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow(
                [
                    r.target_bytes,
                    f"{r.compression_ratio:.4f}",
                    f"{r.sparsity_wp:.6f}",
                    f"{r.sparsity_east:.6f}",
                    f"{r.accuracy_wp:.6f}",
                    f"{r.accuracy_east:.6f}",
                ]
            )
    return path


def render_training_figure(
    path: str | Path,
    logs: list[EpochLog],
    target_bytes: int | None = None,
    title: str = "training run",
) -> Path:
    """Two panels: packed size (with group-size step marks and the byte
    target) and validation accuracy, both against the epoch axis."""
    path = Path(path)
    epochs = [l.epoch for l in logs]
    fig, (ax_mem, ax_acc) = plt.subplots(2, 1, figsize=(7, 7), sharex=True)

    ax_mem.plot(epochs, [l.estimated_bytes for l in logs], color="tab:red", label="packed bytes")
    if target_bytes:
        ax_mem.axhline(target_bytes, color="tab:gray", linestyle="--", label="byte target")
    steps = [
        (b.epoch, b.estimated_bytes)
        for a, b in zip(logs, logs[1:])
        if b.group_size != a.group_size
    ]
    if steps:
        ax_mem.scatter(
            [e for e, _ in steps],
            [v for _, v in steps],
            color="tab:blue",
            zorder=3,
            label="group-size step",
        )
    frozen_at = next((l.epoch for l in logs if l.frozen), None)
    if frozen_at is not None:
        ax_mem.axvline(frozen_at, color="tab:green", linestyle=":", label="frozen")
    ax_mem.set_ylabel("container bytes")
    ax_mem.legend(loc="best", fontsize=8)
    ax_mem.set_title(title)

    ax_acc.plot(epochs, [l.val_accuracy for l in logs], color="tab:blue")
    twin = ax_acc.twinx()
    twin.plot(epochs, [l.sparsity for l in logs], color="tab:orange", alpha=0.6)
    twin.set_ylabel("sparsity", color="tab:orange")
    ax_acc.set_ylabel("val accuracy")
    ax_acc.set_xlabel("epoch")

    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_sweep_figure(path: str | Path, rows: list[SweepRow]) -> Path:
    """Sparsity and accuracy of both modes across byte targets."""
    path = Path(path)
    rows = sorted(rows, key=lambda r: r.target_bytes)
    kb = [r.target_bytes / 1024 for r in rows]
    fig, (ax_s, ax_a) = plt.subplots(1, 2, figsize=(10, 4))

    ax_s.plot(kb, [r.sparsity_wp for r in rows], "o-", color="tab:blue", label="WP")
    ax_s.plot(kb, [r.sparsity_east for r in rows], "o-", color="tab:red", label="grouped")
    ax_s.set_xlabel("byte target (kB)")
    ax_s.set_ylabel("sparsity at constraint")
    ax_s.invert_xaxis()
    ax_s.legend()

    ax_a.plot(kb, [100 * r.accuracy_wp for r in rows], "o-", color="tab:blue", label="WP")
    ax_a.plot(kb, [100 * r.accuracy_east for r in rows], "o-", color="tab:red", label="grouped")
    ax_a.set_xlabel("byte target (kB)")
    ax_a.set_ylabel("top-1 accuracy (%)")
    ax_a.invert_xaxis()
    ax_a.legend()

    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def inference_report_text(plan, stats, total_bytes: int) -> str:
    """Plain-text per-layer decode/compute accounting for one inference."""
    lines = [
        f"container bytes:        {total_bytes}",
        f"weight scratch bytes:   {plan.weight_scratch_bytes}",
        f"activation peak bytes:  {plan.activation_bytes}",
        f"decoded bytes total:    {stats.total_decode_bytes}",
        f"decode time:            {stats.decode_seconds * 1e3:.2f} ms",
        f"kernel time:            {stats.kernel_seconds * 1e3:.2f} ms",
        f"multiply-accumulates:   {stats.mac_count}",
        "per-layer decoded bytes:",
    ]
    for name, nbytes in stats.per_layer_decode_bytes:
        lines.append(f"  {name:16s} {nbytes}")
    return "\n".join(lines)
