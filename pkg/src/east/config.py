"""Plain-text key=value run configuration.

One `key=value` per line; blank lines and `#` comments are ignored.
Unknown keys are rejected so typos fail fast instead of silently running
with a default. The EAST_SEED environment variable, when set, overrides
the configured seed.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields
from pathlib import Path

from .schedule import ScheduleConfig
from .trainer import TrainConfig

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


class ConfigError(ValueError):
    """Bad configuration file content."""


@dataclass
class RunConfig:
    dataset: str = ""
    out_dir: str = "east_runs"
    train_n: int = 8000
    val_n: int = 1000
    test_n: int = 2000
    epochs: int = 40
    batch_size: int = 128
    lr0: float = 0.03  # the full-scale recipe's 0.1 diverges on the small BN-free net
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0
    mode: str = "east"
    target_memory_bytes: int = 0  # 0 = unset; required for east/wp
    channels: tuple[int, ...] = (16, 32, 96)
    augment: bool = True
    calibration_samples: int = 100
    plots: bool = True
    # schedule overrides
    initial_sparsity: float = 0.30
    sparsity_step: float = 0.01
    halve_epochs: tuple[int, ...] = (20, 50)
    gs_start_epoch: int = 20
    gs_step_interval: int = 10
    max_group_size: int = 16

    def schedule_config(self) -> ScheduleConfig:
        return ScheduleConfig(
            initial_sparsity=self.initial_sparsity,
            base_step=self.sparsity_step,
            halve_epochs=self.halve_epochs,
            gs_start_epoch=self.gs_start_epoch,
            gs_step_interval=self.gs_step_interval,
            max_group_size=self.max_group_size,
        )

    def train_config(self, mode: str | None = None) -> TrainConfig:
        mode = mode or self.mode
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr0=self.lr0,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            seed=self.seed,
            mode=mode,
            target_bytes=self.target_memory_bytes or None,
            augment=self.augment,
            calibration_samples=self.calibration_samples,
        )


def _coerce(name: str, kind, raw: str):
    raw = raw.strip()
    if kind is bool:
        low = raw.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is str:
            return raw
        # comma-separated integer tuple
        return tuple(int(v) for v in raw.split(",") if v.strip())
    except ValueError as err:
        raise ConfigError(f"{name}: cannot parse {raw!r}") from err


_TUPLE_KEYS = {"channels", "halve_epochs"}


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    known = {f.name for f in fields(RunConfig)}
    defaults = RunConfig()
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {stripped!r}")
        key, raw = (s.strip() for s in stripped.split("=", 1))
        if key not in known:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        kind = tuple if key in _TUPLE_KEYS else type(getattr(defaults, key))
        values[key] = _coerce(key, kind, raw)
    return RunConfig(**values)


def load_run_config(path: str | Path, need_dataset: bool = True) -> RunConfig:
    """Parse, validate paths/mode, and apply the EAST_SEED override."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {p} does not exist")
    cfg = parse_config(p.read_text(), source=str(p))
    if cfg.mode not in ("east", "wp", "dense"):
        raise ConfigError(f"mode must be east, wp or dense, got {cfg.mode!r}")
    if need_dataset:
        if not cfg.dataset:
            raise ConfigError("config is missing the dataset path")
        if not Path(cfg.dataset).exists():
            raise ConfigError(f"dataset path {cfg.dataset} does not exist")
    if cfg.mode in ("east", "wp") and cfg.target_memory_bytes <= 0:
        raise ConfigError(f"mode {cfg.mode} needs target_memory_bytes")
    env_seed = os.environ.get("EAST_SEED")
    if env_seed is not None:
        try:
            cfg.seed = int(env_seed)
        except ValueError as err:
            raise ConfigError(f"EAST_SEED must be an integer, got {env_seed!r}") from err
    return cfg
