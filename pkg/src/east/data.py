"""Dataset ingestion and generation in the CIFAR-10 binary record format.

One record is 3073 bytes: a label byte (class 0..9) followed by 3072
pixel bytes in planar RGB order (1024 red, 1024 green, 1024 blue, each a
row-major 32x32 plane). Ingestion scales pixels to [0, 1], splits by
record order, and normalizes every split with per-channel mean/std
computed on the training subset.

The synthetic writer produces files in the same format so the full
pipeline runs without the real dataset: each class is a fixed blocky
color template, and samples are jittered, gain-scaled, noisy copies.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

RECORD_BYTES = 3073
IMAGE_SIDE = 32
NUM_CLASSES = 10
_PLANE = IMAGE_SIDE * IMAGE_SIDE


class DatasetFormatError(ValueError):
    """Malformed dataset bytes; the message names the failing byte offset."""


@dataclass
class DataBundle:
    train_x: np.ndarray  # (N, 32, 32, 3) float32, normalized
    train_y: np.ndarray  # (N,) int64
    val_x: np.ndarray
    val_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    mean: np.ndarray  # (3,) float32, of the [0,1]-scaled training subset
    std: np.ndarray  # (3,) float32

    def normalize(self, raw01: np.ndarray) -> np.ndarray:
        return ((raw01 - self.mean) / self.std).astype(np.float32)


def parse_records(blob: bytes, source: str = "<bytes>") -> tuple[np.ndarray, np.ndarray]:
    """(labels, images in [0,1] HWC) from raw record bytes."""
    n, rem = divmod(len(blob), RECORD_BYTES)
    if rem:
        raise DatasetFormatError(
            f"{source}: truncated final record at byte offset {n * RECORD_BYTES}"
        )
    if n == 0:
        raise DatasetFormatError(f"{source}: no records")
    arr = np.frombuffer(blob, dtype=np.uint8).reshape(n, RECORD_BYTES)
    labels = arr[:, 0]
    bad = np.flatnonzero(labels >= NUM_CLASSES)
    if bad.size:
        k = int(bad[0])
        raise DatasetFormatError(
            f"{source}: label {labels[k]} out of range at byte offset {k * RECORD_BYTES}"
        )
    planes = arr[:, 1:].reshape(n, 3, IMAGE_SIDE, IMAGE_SIDE)
    images = planes.transpose(0, 2, 3, 1).astype(np.float32) / 255.0
    return labels.astype(np.int64), images


def _read_stream(files: list[Path]) -> tuple[np.ndarray, np.ndarray]:
    labels, images = [], []
    for f in files:
        y, x = parse_records(f.read_bytes(), source=str(f))
        labels.append(y)
        images.append(x)
    return np.concatenate(labels), np.concatenate(images)


def _resolve_files(path: str | Path) -> tuple[list[Path], list[Path]]:
    """(training files, test files) for a dataset path.

    A directory is searched for the standard batch names first
    (data_batch_*.bin / test_batch.bin), then for train.bin / test.bin.
    A single file serves as one stream for all three splits.
    """
    p = Path(path)
    if p.is_file():
        return [p], []
    if p.is_dir():
        train = sorted(p.glob("data_batch_*.bin")) or [
            f for f in [p / "train.bin"] if f.exists()
        ]
        if not train:
            raise FileNotFoundError(f"no dataset files under {p}")
        test = [f for f in [p / "test_batch.bin", p / "test.bin"] if f.exists()]
        return train, test[:1]
    raise FileNotFoundError(f"dataset path {p} does not exist")


def ingest_cifar_binary(
    path: str | Path, train_n: int, val_n: int, test_n: int
) -> DataBundle:
    """Deterministic split by record order, normalized on the train subset.

    With a directory, train and validation come from the training files in
    name order and test from the test file; a single file is sliced
    train / val / test front to back.
    """
    train_files, test_files = _resolve_files(path)
    y_all, x_all = _read_stream(train_files)
    if not test_files:
        need = train_n + val_n + test_n
        if len(y_all) < need:
            raise DatasetFormatError(
                f"{path}: {len(y_all)} records, need {need} for the requested splits"
            )
        test_x, test_y = x_all[train_n + val_n : need], y_all[train_n + val_n : need]
    else:
        if len(y_all) < train_n + val_n:
            raise DatasetFormatError(
                f"{path}: {len(y_all)} training records, need {train_n + val_n}"
            )
        ty, tx = _read_stream(test_files)
        if len(ty) < test_n:
            raise DatasetFormatError(
                f"{test_files[0]}: {len(ty)} test records, need {test_n}"
            )
        test_x, test_y = tx[:test_n], ty[:test_n]
    train_x, train_y = x_all[:train_n], y_all[:train_n]
    val_x, val_y = x_all[train_n : train_n + val_n], y_all[train_n : train_n + val_n]

    mean = train_x.mean(axis=(0, 1, 2), dtype=np.float64).astype(np.float32)
    std = np.maximum(
        train_x.std(axis=(0, 1, 2), dtype=np.float64).astype(np.float32), 1e-6
    )
    norm = lambda x: ((x - mean) / std).astype(np.float32)
    return DataBundle(
        train_x=norm(train_x),
        train_y=train_y,
        val_x=norm(val_x),
        val_y=val_y,
        test_x=norm(test_x),
        test_y=test_y,
        mean=mean,
        std=std,
    )


def augment_batch(x: np.ndarray, rng: np.random.Generator, pad: int = 4) -> np.ndarray:
    """Random horizontal flip plus zero-pad-and-crop, per sample."""
    n, h, w, _ = x.shape
    out = x.copy()
    flips = rng.random(n) < 0.5
    out[flips] = out[flips, :, ::-1, :]
    xp = np.pad(out, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    offs = rng.integers(0, 2 * pad + 1, size=(n, 2))
    for k in range(n):
        out[k] = xp[k, offs[k, 0] : offs[k, 0] + h, offs[k, 1] : offs[k, 1] + w]
    return out


def records_to_bytes(labels: np.ndarray, images01: np.ndarray) -> bytes:
    """Serialize (labels, [0,1] HWC images) into record bytes."""
    n = labels.shape[0]
    px = np.clip(np.round(images01 * 255.0), 0, 255).astype(np.uint8)
    rec = np.empty((n, RECORD_BYTES), dtype=np.uint8)
    rec[:, 0] = labels
    rec[:, 1:] = px.transpose(0, 3, 1, 2).reshape(n, 3 * _PLANE)
    return rec.tobytes()


def synthesize_split(
    n: int, rng: np.random.Generator, templates: np.ndarray, noise: float, jitter: int
) -> tuple[np.ndarray, np.ndarray]:
    labels = rng.integers(0, NUM_CLASSES, n)
    imgs = templates[labels].copy()
    shifts = rng.integers(-jitter, jitter + 1, size=(n, 2))
    for k in range(n):
        imgs[k] = np.roll(imgs[k], (shifts[k, 0], shifts[k, 1]), axis=(0, 1))
    gains = rng.uniform(0.75, 1.25, size=(n, 1, 1, 1))
    imgs = imgs * gains + rng.normal(0.0, noise, size=imgs.shape)
    return labels.astype(np.int64), np.clip(imgs, 0.0, 1.0).astype(np.float32)


def class_templates(rng: np.random.Generator) -> np.ndarray:
    """Ten 32x32x3 blocky color patterns, one per class."""
    base = rng.uniform(0.1, 0.9, size=(NUM_CLASSES, 8, 8, 3))
    return np.kron(base, np.ones((1, 4, 4, 1))).astype(np.float32)


def write_synthetic_dataset(
    out_dir: str | Path,
    n_train: int = 11000,
    n_test: int = 2000,
    seed: int = 7,
    noise: float = 0.30,
    jitter: int = 4,
) -> tuple[Path, Path]:
    """Write train.bin / test.bin; returns their paths.

    n_train covers both the training and validation splits taken at
    ingestion time. Higher `noise` and `jitter` make the task harder.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    templates = class_templates(rng)
    train_path, test_path = out / "train.bin", out / "test.bin"
    y, x = synthesize_split(n_train, rng, templates, noise, jitter)
    train_path.write_bytes(records_to_bytes(y, x))
    y, x = synthesize_split(n_test, rng, templates, noise, jitter)
    test_path.write_bytes(records_to_bytes(y, x))
    return train_path, test_path
