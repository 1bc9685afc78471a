"""Sparsity / group-size schedule and the freeze state machine.

The sparsity target starts at 30% and grows 1% per epoch; the step is
halved at epochs 20 and 50. The group size is 1 until epoch 20, then grows
by 1 every 10 epochs, capped. Once the memory constraint is met the state
freezes: sparsity and group size never change again.

Boundary reading: epochs 1..20 use the full step and epoch 21 is the first
halved step; the first group-size increase takes effect at epoch 20.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

SPARSITY_CEILING = 0.999


@dataclass(frozen=True)
class ScheduleConfig:
    initial_sparsity: float = 0.30
    base_step: float = 0.01
    halve_epochs: tuple[int, ...] = (20, 50)
    gs_start_epoch: int = 20
    gs_step_interval: int = 10
    max_group_size: int = 16

    def __post_init__(self):
        if not (0.0 <= self.initial_sparsity < 1.0):
            raise ValueError("initial_sparsity must be in [0, 1)")
        if self.base_step <= 0:
            raise ValueError("base_step must be > 0")
        halves = tuple(int(e) for e in self.halve_epochs)
        if any(b <= a for a, b in zip(halves, halves[1:])):
            raise ValueError("halve_epochs must be strictly increasing")
        if self.gs_step_interval < 1:
            raise ValueError("gs_step_interval must be >= 1")
        if self.max_group_size < 1:
            raise ValueError("max_group_size must be >= 1")
        object.__setattr__(self, "halve_epochs", halves)


@dataclass(frozen=True)
class ScheduleState:
    epoch: int = 0
    current_sparsity: float = 0.30
    current_gs: int = 1
    frozen: bool = False
    freeze_epoch: int | None = None

    @classmethod
    def initial(cls, cfg: ScheduleConfig) -> "ScheduleState":
        return cls(
            epoch=0,
            current_sparsity=target_sparsity(cfg, 0),
            current_gs=group_size_at(cfg, 0),
        )


def target_sparsity(cfg: ScheduleConfig, epoch: int) -> float:
    """Sparsity target at `epoch`: initial + sum of per-epoch steps.

    The step for epoch i is base_step / 2^h where h counts halving epochs
    strictly below i, so "halved at 20" means epoch 21 takes the first
    halved step. Clamped to the 0.999 ceiling.
    """
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    s = cfg.initial_sparsity
    bounds = [0, *cfg.halve_epochs, epoch]
    step = cfg.base_step
    for lo, hi in zip(bounds, bounds[1:]):
        if hi > lo:
            s += (min(hi, epoch) - min(lo, epoch)) * step
        step /= 2.0
    return min(s, SPARSITY_CEILING)


def group_size_at(cfg: ScheduleConfig, epoch: int) -> int:
    """Group size at `epoch`: 1 before gs_start_epoch, then +1 per interval.

    The first increase (to 2) takes effect at gs_start_epoch itself.
    """
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    if epoch < cfg.gs_start_epoch:
        return 1
    return min(
        cfg.max_group_size,
        2 + (epoch - cfg.gs_start_epoch) // cfg.gs_step_interval,
    )


def advance(state: ScheduleState, cfg: ScheduleConfig, constraint_met: bool) -> ScheduleState:
    """One epoch tick of the freeze state machine.

    Frozen states keep their latched sparsity/GS forever. Meeting the
    constraint freezes at the current epoch; otherwise the targets for
    epoch+1 are adopted.
    """
    if state.frozen:
        return replace(state, epoch=state.epoch + 1)
    if constraint_met:
        return replace(state, frozen=True, freeze_epoch=state.epoch)
    nxt = state.epoch + 1
    return ScheduleState(
        epoch=nxt,
        current_sparsity=target_sparsity(cfg, nxt),
        current_gs=group_size_at(cfg, nxt),
    )
