"""End-to-end train and eval drivers shared by the service and the CLI.

These functions own the boring glue: resolving data sources, building or
restoring systems, wiring executors, and writing result artifacts to an
output directory. They take plain keyword arguments and return plain dicts
so a JSON API can wrap them directly.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

import numpy as np

from .checkpoint import file_sha256, load_system, save_checkpoint
from .config import PvmConfig, SyntheticSpec, load_config
from .dataset import LabeledSequence, find_sequence_dirs, load_sequence, synth_sequence
from .errors import ConfigError, DatasetError
from .executor import Executor, build_system, reset_readout_weights, run_training
from .metrics import evaluate_records, records_from, write_curves_csv, write_summary_json
from .metrics import MetricCurve, accuracy_curve, precision_curve, success_curve
from .tracker import baseline_boxes, run_sequence_tracking, write_result_log
from .config import topology_for

BASELINE_KINDS = ("null", "center", "perturbed_gt")


def resolve_sequences(config: PvmConfig, data_paths: list[str],
                      synthetic: SyntheticSpec | None) -> list[LabeledSequence]:
    """Data directories win; otherwise the synthetic spec; otherwise error."""
    size = (config.frame_width, config.frame_height)
    if data_paths:
        dirs = []
        for p in data_paths:
            dirs.extend(find_sequence_dirs(p))
        return [load_sequence(d, size) for d in dirs]
    if synthetic is not None:
        return [synth_sequence(synthetic, size)]
    raise DatasetError("no data directories given and the config has no synthetic block")


def run_train_job(*, config_path: str | None = None, data: list[str] | None = None,
                  out_dir: str, steps: int, regime: str = "joint",
                  from_checkpoint: str | None = None,
                  readout_lr: float | None = None, workers: int = 1,
                  seed: int | None = None, checkpoint_every: int = 0,
                  reset_readout: bool = True, log_every: int = 1000,
                  progress_cb=None) -> dict:
    """Train (or continue training) a system and leave a checkpoint behind."""
    data = data or []
    synthetic = None
    if from_checkpoint:
        system, synthetic = load_system(from_checkpoint)
        config = system.config
    else:
        if not config_path:
            raise ConfigError("training from scratch requires a config")
        config, synthetic = load_config(config_path)
        if seed is not None:
            config = dataclasses.replace(config, seed=int(seed))
        system = build_system(config, topology_for(config))

    if regime == "prime":
        if from_checkpoint is None:
            raise ConfigError("prime regime requires a starting checkpoint")
        if reset_readout:
            reset_readout_weights(system)

    sequences = resolve_sequences(config, data, synthetic)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    with Executor(system, workers=workers, regime=regime,
                  readout_lr=readout_lr) as ex:
        report = run_training(ex, sequences, steps, out_dir=out,
                              checkpoint_every=checkpoint_every,
                              log_every=log_every, synthetic=synthetic,
                              progress_cb=progress_cb)
        final_path = out / f"step_{system.step_index:010d}.pvmckpt"
        save_checkpoint(system, final_path, synthetic)

    result = {
        "final_step": report.final_step,
        "final_checkpoint": str(final_path),
        "final_checkpoint_sha256": file_sha256(final_path),
        "checkpoints": [str(p) for p in report.checkpoints],
        "training_log": str(report.log_path) if report.log_path else None,
    }
    if report.log_rows:
        result["last_log_row"] = report.log_rows[-1]
    return result


def _curves_for(records) -> list[MetricCurve]:
    return [success_curve(records), precision_curve(records), accuracy_curve(records)]


def run_eval_job(*, checkpoint: str, data: list[str] | None = None,
                 out_dir: str, settle: int | None = None,
                 baselines: list[str] | None = None, workers: int = 1,
                 dump_heatmaps: bool = False, progress_cb=None) -> dict:
    """Track every sequence with the checkpointed model and score it.

    Each sequence starts from the checkpointed state (the system is
    re-restored between sequences, so evaluation order cannot matter).
    Baseline trackers run on the same ground truth for comparison. Scores
    are written per sequence and pooled over all frames.
    """
    baselines = baselines or []
    for b in baselines:
        if b not in BASELINE_KINDS:
            raise ConfigError(f"unknown baseline {b!r}; known: {BASELINE_KINDS}")
    system, synthetic = load_system(checkpoint)
    config = system.config
    sequences = resolve_sequences(config, data or [], synthetic)
    for seq in sequences:
        if seq.labels is None:
            raise DatasetError(f"sequence {seq.name} has no labels; cannot score")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    frame_size = (config.frame_width, config.frame_height)

    pooled: dict[str, list] = {"pvm": []}
    per_sequence: dict[str, dict] = {}
    for si, seq in enumerate(sequences):
        if si > 0:
            system, _ = load_system(checkpoint)
        seq_dir = out / seq.name
        seq_dir.mkdir(parents=True, exist_ok=True)

        def seq_progress(done, total, _si=si):
            if progress_cb is not None:
                progress_cb({"sequence": _si + 1, "sequences": len(sequences),
                             "frame": done, "frames": total})

        with Executor(system, workers=workers) as ex:
            results = run_sequence_tracking(ex, seq.frames, settle,
                                            keep_heatmaps=dump_heatmaps,
                                            progress_cb=seq_progress)
        write_result_log(seq_dir / "pvm_results.csv", results)
        if dump_heatmaps:
            stack = np.stack([r.combined.values for r in results])
            np.save(seq_dir / "pvm_heatmaps.npy", stack)

        tracked = {"pvm": [r.box for r in results]}
        for kind in baselines:
            tracked[kind] = baseline_boxes(kind, seq.labels, frame_size,
                                           seed=config.seed + si)
        seq_summary = {}
        for name, boxes in tracked.items():
            records = records_from(boxes, seq.labels)
            pooled.setdefault(name, []).extend(records)
            seq_summary[name] = evaluate_records(records)
            for curve in _curves_for(records):
                write_curves_csv(seq_dir / f"{name}_{curve.name}.csv", curve)
        per_sequence[seq.name] = seq_summary

    overall = {name: evaluate_records(records) for name, records in pooled.items()}
    summary = {
        "checkpoint": str(checkpoint),
        "checkpoint_sha256": file_sha256(checkpoint),
        "settle_steps": settle if settle is not None else config.settle_steps,
        "sequences": {name: {k: _strip_curves(v) for k, v in s.items()}
                      for name, s in per_sequence.items()},
        "overall": {name: _strip_curves(v) for name, v in overall.items()},
    }
    write_summary_json(out / "summary.json", summary)
    for name, records in pooled.items():
        for curve in _curves_for(records):
            write_curves_csv(out / f"overall_{name}_{curve.name}.csv", curve)
    summary["summary_path"] = str(out / "summary.json")
    return summary


def _strip_curves(summary: dict) -> dict:
    return {k: v for k, v in summary.items() if k != "curves"}
