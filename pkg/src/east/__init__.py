"""Encoding-aware sparse training, fixed-point quantization, and a
compressed model container with its inference runtime.

The pipeline: train a small conv net under a hard byte budget using
group pruning whose group size grows over training, quantize weights and
activations to 8-bit fixed point, pack every layer as an independently
decodable LZ4 block, then execute the container by decoding one layer at
a time into a shared scratch buffer.
"""

from .codec import (
    CorruptContainerError,
    MemoryReport,
    estimate_memory,
    pack_container,
    parse_container,
    unpack_layer,
)
from .config import ConfigError, RunConfig, load_run_config, parse_config
from .data import DataBundle, ingest_cifar_binary, write_synthetic_dataset
from .layers import Network, build_toy_net
from .lz4 import CorruptBlockError, lz4_compress, lz4_decompress
from .pruning import PruneMask, SparsityTarget, group_prune, magnitude_prune
from .quantize import QuantParams, QuantTensor, choose_frac_bits, dequantize
from .runtime import DecodeStats, ScratchPlan, evaluate_container, run_container
from .schedule import ScheduleConfig, ScheduleState, group_size_at, target_sparsity
from .trainer import (
    MemoryConstraintError,
    TrainConfig,
    TrainResult,
    compress_checkpoint,
    train,
    train_dense,
    train_east,
    train_wp,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "CorruptBlockError",
    "CorruptContainerError",
    "DataBundle",
    "DecodeStats",
    "MemoryConstraintError",
    "MemoryReport",
    "Network",
    "PruneMask",
    "QuantParams",
    "QuantTensor",
    "RunConfig",
    "ScheduleConfig",
    "ScheduleState",
    "ScratchPlan",
    "SparsityTarget",
    "TrainConfig",
    "TrainResult",
    "build_toy_net",
    "choose_frac_bits",
    "compress_checkpoint",
    "dequantize",
    "estimate_memory",
    "evaluate_container",
    "group_prune",
    "group_size_at",
    "ingest_cifar_binary",
    "load_run_config",
    "lz4_compress",
    "lz4_decompress",
    "magnitude_prune",
    "pack_container",
    "parse_container",
    "parse_config",
    "run_container",
    "target_sparsity",
    "train",
    "train_dense",
    "train_east",
    "train_wp",
    "unpack_layer",
    "write_synthetic_dataset",
]
