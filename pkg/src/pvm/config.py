"""Model configuration: JSON in, validated dataclass out.

A config fully determines the system geometry and training schedule; a
checkpoint embeds a copy so a saved model can be rebuilt without the
original file. Unknown keys are rejected rather than ignored, typos in a
schedule field should fail loudly, not train a different model.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .schedule import ScheduleSpec, default_enable_steps
from .topology import TopologySpec, build_topology


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the built-in sequence generator."""

    kind: str = "bouncing_square"
    frames: int = 600
    square_size: int = 12
    speed: float = 2.0
    present_frames: int = 80
    absent_frames: int = 20
    seed: int = 1234

    def __post_init__(self):
        if self.kind not in ("bouncing_square", "constant", "blank"):
            raise ConfigError(f"unknown synthetic kind {self.kind!r}")
        if self.frames < 1:
            raise ConfigError("synthetic frames must be >= 1")
        if self.kind == "bouncing_square":
            if self.square_size < 1:
                raise ConfigError("square_size must be >= 1")
            if self.present_frames < 1 or self.absent_frames < 0:
                raise ConfigError("present_frames >= 1 and absent_frames >= 0 required")


@dataclass(frozen=True)
class PvmConfig:
    name: str
    frame_width: int
    frame_height: int
    tile_size: int
    layer_grids: tuple[tuple[int, int], ...]
    hidden_size: int
    heatmap_size: int
    readout_patch_sizes: tuple[int, ...]
    readout_canvas_sizes: tuple[int, ...]
    schedule: ScheduleSpec
    tau: float = 0.5
    settle_steps: int = 4
    seed: int = 424242
    readout_mix: float = 1.0

    def __post_init__(self):
        if self.frame_width < 1 or self.frame_height < 1:
            raise ConfigError("frame dimensions must be positive")
        if self.tile_size < 1:
            raise ConfigError("tile_size must be >= 1")
        if self.hidden_size < 1:
            raise ConfigError("hidden_size must be >= 1")
        if self.hidden_size >= self.tile_size * self.tile_size * 3:
            raise ConfigError(
                f"hidden_size {self.hidden_size} must be smaller than the "
                f"tile signal size {self.tile_size * self.tile_size * 3}")
        if not 0.0 <= self.tau < 1.0:
            raise ConfigError(f"tau must be in [0, 1), got {self.tau}")
        if self.settle_steps < 1:
            raise ConfigError("settle_steps must be >= 1")
        if self.heatmap_size < 1:
            raise ConfigError("heatmap_size must be >= 1")
        if len(self.schedule.layer_enable_steps) != len(self.layer_grids):
            raise ConfigError(
                "schedule.layer_enable_steps must have one entry per layer")


_SCHEDULE_KEYS = {f.name for f in dataclasses.fields(ScheduleSpec)}
_SYNTH_KEYS = {f.name for f in dataclasses.fields(SyntheticSpec)}
_CONFIG_KEYS = {f.name for f in dataclasses.fields(PvmConfig)} | {"synthetic"}


def _reject_unknown(d: dict, allowed: set, where: str):
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown {where} keys: {sorted(unknown)}")


def parse_config(text: str) -> tuple[PvmConfig, SyntheticSpec | None]:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    _reject_unknown(raw, _CONFIG_KEYS, "config")

    required = ["name", "frame_width", "frame_height", "tile_size",
                "layer_grids", "hidden_size", "heatmap_size",
                "readout_patch_sizes", "readout_canvas_sizes"]
    missing = [k for k in required if k not in raw]
    if missing:
        raise ConfigError(f"missing config keys: {missing}")

    grids = raw["layer_grids"]
    if (not isinstance(grids, list) or not grids
            or not all(isinstance(g, list) and len(g) == 2 for g in grids)):
        raise ConfigError("layer_grids must be a non-empty list of [width, height] pairs")
    grids = tuple((int(w), int(h)) for w, h in grids)

    sched_raw = dict(raw.get("schedule") or {})
    _reject_unknown(sched_raw, _SCHEDULE_KEYS, "schedule")
    if "layer_enable_steps" in sched_raw:
        enable = tuple(int(s) for s in sched_raw.pop("layer_enable_steps"))
    else:
        enable = default_enable_steps(len(grids))
    schedule = ScheduleSpec(layer_enable_steps=enable, **sched_raw)

    synthetic = None
    if raw.get("synthetic") is not None:
        synth_raw = dict(raw["synthetic"])
        _reject_unknown(synth_raw, _SYNTH_KEYS, "synthetic")
        synthetic = SyntheticSpec(**synth_raw)

    kwargs = {k: v for k, v in raw.items() if k not in ("schedule", "synthetic")}
    kwargs["layer_grids"] = grids
    kwargs["readout_patch_sizes"] = tuple(int(p) for p in raw["readout_patch_sizes"])
    kwargs["readout_canvas_sizes"] = tuple(int(r) for r in raw["readout_canvas_sizes"])
    config = PvmConfig(schedule=schedule, **kwargs)
    return config, synthetic


def load_config(path: str | Path) -> tuple[PvmConfig, SyntheticSpec | None]:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    return parse_config(text)


def config_to_dict(config: PvmConfig, synthetic: SyntheticSpec | None = None) -> dict:
    """JSON-ready dict; parse_config(json.dumps(...)) round-trips it."""
    d = dataclasses.asdict(config)
    d["layer_grids"] = [list(g) for g in config.layer_grids]
    d["readout_patch_sizes"] = list(config.readout_patch_sizes)
    d["readout_canvas_sizes"] = list(config.readout_canvas_sizes)
    d["schedule"] = dataclasses.asdict(config.schedule)
    d["schedule"]["layer_enable_steps"] = list(config.schedule.layer_enable_steps)
    d["synthetic"] = dataclasses.asdict(synthetic) if synthetic is not None else None
    return d


def topology_for(config: PvmConfig) -> TopologySpec:
    return build_topology(
        frame_width=config.frame_width,
        frame_height=config.frame_height,
        tile_size=config.tile_size,
        layer_grids=list(config.layer_grids),
        hidden_size=config.hidden_size,
        heatmap_size=config.heatmap_size,
        patch_sizes=list(config.readout_patch_sizes),
        canvas_sizes=list(config.readout_canvas_sizes),
    )
