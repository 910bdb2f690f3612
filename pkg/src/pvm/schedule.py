"""Staged enablement and learning-rate schedule for long training runs.

Layers come online one at a time from the bottom; a freshly enabled layer
trains at the initial rate for a fixed number of steps, then drops to the
mid rate, and everything drops to the final rate once the global step passes
the final threshold. Lateral and feedback context connections switch on at
their own global steps (feedback covers the topmost broadcast too).
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError


@dataclass(frozen=True)
class ScheduleSpec:
    layer_enable_steps: tuple[int, ...]
    lr_initial: float = 0.0002
    lr_mid: float = 0.00005
    lr_final: float = 0.00001
    lr_drop_after_enable: int = 100_000
    global_final_step: int = 1_500_000
    lateral_enable_step: int = 700_000
    feedback_enable_step: int = 900_000

    def __post_init__(self):
        if not self.layer_enable_steps:
            raise ConfigError("layer_enable_steps must not be empty")
        if any(s < 0 for s in self.layer_enable_steps):
            raise ConfigError("layer enable steps must be non-negative")
        if list(self.layer_enable_steps) != sorted(self.layer_enable_steps):
            raise ConfigError("layer enable steps must be non-decreasing")
        for name in ("lr_initial", "lr_mid", "lr_final"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.lr_drop_after_enable <= 0:
            raise ConfigError("lr_drop_after_enable must be positive")


def default_enable_steps(n_layers: int, spacing: int = 100_000) -> tuple[int, ...]:
    """Layer k comes online at k * spacing."""
    return tuple(k * spacing for k in range(n_layers))


@dataclass(frozen=True)
class LayerPhase:
    enabled: bool
    lr: float


@dataclass(frozen=True)
class SchedulePoint:
    per_layer: tuple[LayerPhase, ...]
    lateral_on: bool
    feedback_on: bool


def schedule_at(spec: ScheduleSpec, step: int) -> SchedulePoint:
    """Enable flags and learning rates in force at a global step."""
    per_layer = []
    for enable in spec.layer_enable_steps:
        if step < enable:
            per_layer.append(LayerPhase(False, 0.0))
        elif step >= spec.global_final_step:
            per_layer.append(LayerPhase(True, spec.lr_final))
        elif step - enable < spec.lr_drop_after_enable:
            per_layer.append(LayerPhase(True, spec.lr_initial))
        else:
            per_layer.append(LayerPhase(True, spec.lr_mid))
    return SchedulePoint(
        per_layer=tuple(per_layer),
        lateral_on=step >= spec.lateral_enable_step,
        feedback_on=step >= spec.feedback_enable_step,
    )
