"""Command-line front end: train, compress, eval, inspect, sweep, gendata.

Every command is deterministic given its inputs and seed; the EAST_SEED
environment variable overrides the configured seed. On failure the
command exits non-zero with a message on stderr and removes any output
files it had started writing.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .codec import (
    KIND_BIAS,
    KIND_CONV2D,
    KIND_FULLY_CONNECTED,
    CorruptContainerError,
    decode_entry,
    decode_float_entry,
    parse_container,
)
from .config import ConfigError, RunConfig, load_run_config
from .data import DataBundle, DatasetFormatError, ingest_cifar_binary, write_synthetic_dataset
from .layers import Network, build_toy_net
from .lz4 import CorruptBlockError
from .quantize import QuantParams, QuantTensor, quantize_array
from .report import (
    SweepRow,
    inference_report_text,
    render_sweep_figure,
    render_training_figure,
    write_epoch_csv,
    write_sweep_csv,
)
from .runtime import evaluate_container, run_container
from .tensor import Shape
from .trainer import (
    MemoryConstraintError,
    TrainResult,
    compress_checkpoint,
    export_float_checkpoint,
    network_sparsity,
    train,
)

_EXPECTED_ERRORS = (
    ConfigError,
    DatasetFormatError,
    MemoryConstraintError,
    CorruptContainerError,
    CorruptBlockError,
    ValueError,
    OSError,
)

_TENSOR_KINDS = (KIND_CONV2D, KIND_FULLY_CONNECTED, KIND_BIAS)


class _Outputs:
    """Files written by the running command, removed if it fails."""

    def __init__(self) -> None:
        self.paths: list[Path] = []

    def add(self, path: Path) -> Path:
        self.paths.append(path)
        return path

    def discard_all(self) -> None:
        for p in self.paths:
            try:
                p.unlink()
            except OSError:
                pass


def float_model_bytes(net: Network) -> int:
    """Size of the dense float32 parameter set, the CR reference point."""
    n = sum(net.weights[i].size + net.biases[i].size for i in net.weighted_indices())
    return 4 * n


def _container_float_bytes(entries) -> int:
    return 4 * sum(
        int(np.prod(e.dims)) for e in entries if e.kind in _TENSOR_KINDS
    )


def _load_bundle(cfg: RunConfig) -> DataBundle:
    return ingest_cifar_binary(cfg.dataset, cfg.train_n, cfg.val_n, cfg.test_n)


def _run_one(cfg: RunConfig, mode: str, data: DataBundle) -> TrainResult:
    net = build_toy_net(channels=cfg.channels, seed=cfg.seed)
    return train(net, data, cfg.train_config(mode), cfg.schedule_config())


def _write_run_outputs(
    out_dir: Path,
    tag: str,
    cfg: RunConfig,
    result: TrainResult,
    outputs: _Outputs,
) -> Path:
    model_path = outputs.add(out_dir / f"model_{tag}.east")
    model_path.write_bytes(result.container)
    ckpt_path = outputs.add(out_dir / f"checkpoint_{tag}.east")
    ckpt_path.write_bytes(export_float_checkpoint(result.net, result.act_fracs))
    write_epoch_csv(outputs.add(out_dir / f"epochs_{tag}.csv"), result.logs)
    if cfg.plots:
        render_training_figure(
            outputs.add(out_dir / f"training_{tag}.png"),
            result.logs,
            target_bytes=cfg.target_memory_bytes or None,
            title=f"{tag} run, seed {cfg.seed}",
        )
    return model_path


def cmd_train(args: argparse.Namespace, outputs: _Outputs) -> int:
    cfg = load_run_config(args.config)
    if args.mode:
        cfg.mode = args.mode
        if cfg.mode in ("east", "wp") and cfg.target_memory_bytes <= 0:
            raise ConfigError(f"mode {cfg.mode} needs target_memory_bytes")
    if args.out_dir:
        cfg.out_dir = args.out_dir
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    data = _load_bundle(cfg)
    result = _run_one(cfg, cfg.mode, data)
    model_path = _write_run_outputs(out_dir, cfg.mode, cfg, result, outputs)
    test_acc = evaluate_container(result.container, data.test_x, data.test_y)

    last = result.logs[-1]
    print(f"mode {cfg.mode}, {len(result.logs)} epochs, {result.wall_seconds:.1f} s")
    print(f"container {model_path} ({len(result.container)} bytes)")
    if cfg.target_memory_bytes:
        print(f"byte target {cfg.target_memory_bytes}, frozen at epoch {result.freeze_epoch}")
    print(f"sparsity {network_sparsity(result.net):.4f}, group size {last.group_size}")
    print(f"val top-1 {last.val_accuracy:.4f}, test top-1 {test_acc:.4f}")
    return 0


def cmd_compress(args: argparse.Namespace, outputs: _Outputs) -> int:
    model = Path(args.model)
    if not model.is_file():
        raise ConfigError(f"model file {model} does not exist")
    blob, sparsity, gs = compress_checkpoint(model.read_bytes(), args.target_bytes)
    out = Path(args.out) if args.out else model.with_name(model.stem + "_compressed.east")
    outputs.add(out).write_bytes(blob)
    print(f"compressed {model} -> {out} ({len(blob)} bytes <= {args.target_bytes})")
    print(f"sparsity {sparsity:.4f}, group size {gs}")
    return 0


def cmd_eval(args: argparse.Namespace, outputs: _Outputs) -> int:
    container = Path(args.container)
    if not container.is_file():
        raise ConfigError(f"container file {container} does not exist")
    blob = container.read_bytes()
    data = ingest_cifar_binary(args.data, args.train_n, args.val_n, args.test_n)
    acc = evaluate_container(blob, data.test_x, data.test_y, args.batch_size)
    print(f"test top-1 {acc:.4f} over {data.test_x.shape[0]} samples")

    # decode/scratch accounting from one probe batch
    probe = data.test_x[: min(128, data.test_x.shape[0])]
    f0 = parse_container(blob).entries[0].act_frac_bits
    q = quantize_array(probe, f0)
    qt = QuantTensor(Shape(tuple(probe.shape)), q, QuantParams(f0))
    _, plan, stats = run_container(blob, qt)
    print(inference_report_text(plan, stats, len(blob)))
    return 0


def cmd_inspect(args: argparse.Namespace, outputs: _Outputs) -> int:
    container = Path(args.container)
    if not container.is_file():
        raise ConfigError(f"container file {container} does not exist")
    blob = container.read_bytes()
    parsed = parse_container(blob)
    entries = parsed.entries
    header = 8 + 28 * len(entries)
    stored = sum(e.compressed_len for e in entries)
    float_bytes = _container_float_bytes(entries)

    print(f"{container}: {parsed.total_bytes} bytes, format version {parsed.version}")
    print(f"layer_count {len(entries)} (entries), header {header} B, blocks {stored} B")
    print(f"blocks + header = {header + stored} B, file = {parsed.total_bytes} B")
    if float_bytes:
        print(f"CR vs float32 parameters: {float_bytes / parsed.total_bytes:.2f}")
    print(f"{'idx':>3} {'kind':16} {'dims':>16} {'wf':>3} {'af':>3} {'bf':>3} "
          f"{'raw':>7} {'stored':>7} {'sparsity':>8}")
    for i, e in enumerate(entries):
        dims = "x".join(str(d) for d in e.dims)
        if e.kind in _TENSOR_KINDS:
            if e.float_payload:
                vals = decode_float_entry(blob, e)
            else:
                vals = decode_entry(blob, e)
            sparsity = f"{np.count_nonzero(vals == 0) / vals.size:8.4f}"
        else:
            sparsity = f"{'-':>8}"
        print(
            f"{i:>3} {e.kind_name:16} {dims:>16} {e.weight_frac_bits:>3} "
            f"{e.act_frac_bits:>3} {e.bias_frac_bits:>3} {e.raw_len:>7} "
            f"{e.compressed_len:>7} {sparsity}"
        )
    return 0


def cmd_sweep(args: argparse.Namespace, outputs: _Outputs) -> int:
    cfg = load_run_config(args.config)
    targets = [int(t) for t in args.targets.split(",") if t.strip()]
    if not targets:
        raise ConfigError("--targets needs at least one byte value")
    if any(t <= 0 for t in targets):
        raise ConfigError("byte targets must be positive")
    out_dir = Path(args.out_dir or cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    data = _load_bundle(cfg)
    ref_bytes = float_model_bytes(build_toy_net(channels=cfg.channels, seed=cfg.seed))
    rows: list[SweepRow] = []
    for target in sorted(targets, reverse=True):
        run_cfg = load_run_config(args.config)
        run_cfg.target_memory_bytes = target
        per_mode: dict[str, TrainResult] = {}
        acc: dict[str, float] = {}
        for mode in ("wp", "east"):
            result = _run_one(run_cfg, mode, data)
            _write_run_outputs(out_dir, f"{mode}_{target}", run_cfg, result, outputs)
            per_mode[mode] = result
            acc[mode] = evaluate_container(result.container, data.test_x, data.test_y)
            print(
                f"M_t {target}: {mode} done in {result.wall_seconds:.1f} s, "
                f"sparsity {network_sparsity(result.net):.4f}, test top-1 {acc[mode]:.4f}"
            )
        rows.append(
            SweepRow(
                target_bytes=target,
                compression_ratio=ref_bytes / len(per_mode["east"].container),
                sparsity_wp=network_sparsity(per_mode["wp"].net),
                sparsity_east=network_sparsity(per_mode["east"].net),
                accuracy_wp=acc["wp"],
                accuracy_east=acc["east"],
            )
        )
    csv_path = write_sweep_csv(outputs.add(out_dir / "sweep.csv"), rows)
    if cfg.plots:
        render_sweep_figure(outputs.add(out_dir / "sweep.png"), rows)
    print(f"sweep table written to {csv_path}")
    return 0


def cmd_gendata(args: argparse.Namespace, outputs: _Outputs) -> int:
    out = Path(args.out)
    outputs.add(out / "train.bin")
    outputs.add(out / "test.bin")
    train_path, test_path = write_synthetic_dataset(
        args.out,
        n_train=args.n_train,
        n_test=args.n_test,
        seed=args.seed,
        noise=args.noise,
        jitter=args.jitter,
    )
    print(f"wrote {train_path} and {test_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="east",
        description="memory-constrained sparse training, compression and inference",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one mode end to end, write container + logs")
    p.add_argument("--config", required=True)
    p.add_argument("--mode", choices=("east", "wp", "dense"), help="override the config mode")
    p.add_argument("--out-dir", help="override the config output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compress", help="prune+quantize+encode a float checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--target-bytes", type=int, required=True)
    p.add_argument("--out", help="output path (default: <model>_compressed.east)")
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("eval", help="top-1 accuracy of a container on the test split")
    p.add_argument("--container", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--train-n", type=int, default=8000)
    p.add_argument("--val-n", type=int, default=1000)
    p.add_argument("--test-n", type=int, default=2000)
    p.add_argument("--batch-size", type=int, default=512)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", help="dump container header and per-layer table")
    p.add_argument("--container", required=True)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("sweep", help="WP vs grouped runs over a list of byte targets")
    p.add_argument("--config", required=True)
    p.add_argument("--targets", required=True, help="comma-separated byte targets")
    p.add_argument("--out-dir", help="override the config output directory")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gendata", help="write a synthetic dataset in the binary record format")
    p.add_argument("--out", required=True)
    p.add_argument("--n-train", type=int, default=11000)
    p.add_argument("--n-test", type=int, default=2000)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--noise", type=float, default=0.30)
    p.add_argument("--jitter", type=int, default=4)
    p.set_defaults(func=cmd_gendata)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    outputs = _Outputs()
    try:
        return args.func(args, outputs)
    except _EXPECTED_ERRORS as err:
        outputs.discard_all()
        print(f"error: {err}", file=sys.stderr)
        return 1
    except BaseException:
        outputs.discard_all()
        raise


def _main() -> None:
    sys.exit(main())


if __name__ == "__main__":
    _main()
