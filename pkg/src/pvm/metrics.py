"""Tracking quality measures over per-frame (predicted, truth) box pairs.

Success and precision consider only frames where the truth is present; a
predicted-absent on such a frame scores zero at every parameter value.
Accuracy runs over all frames and also credits correctly reported absences,
so it is the one measure where refusing to guess can pay.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError
from .tracker import BoundingBox


@dataclass
class TrackRecord:
    predicted: BoundingBox
    truth: BoundingBox


@dataclass
class MetricCurve:
    name: str
    grid: np.ndarray
    values: np.ndarray

    @property
    def auc(self) -> float:
        return float(np.trapezoid(self.values, self.grid))

    def value_at(self, x: float) -> float:
        idx = int(np.argmin(np.abs(self.grid - x)))
        if abs(float(self.grid[idx]) - x) > 1e-9:
            raise ContractError(f"{x} is not a grid point of curve {self.name}")
        return float(self.values[idx])


def overlap(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union. Both boxes must be present with positive area."""
    if not (a.present and b.present):
        raise ContractError("overlap requires two present boxes")
    if a.w <= 0 or a.h <= 0 or b.w <= 0 or b.h <= 0:
        raise ContractError("overlap requires boxes with positive area")
    ix = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    iy = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    inter = max(ix, 0.0) * max(iy, 0.0)
    union = a.area + b.area - inter
    return inter / union


def center_distance(a: BoundingBox, b: BoundingBox) -> float:
    (ax, ay), (bx, by) = a.center, b.center
    return float(np.hypot(ax - bx, ay - by))


def success_curve(records: list[TrackRecord]) -> MetricCurve:
    """Fraction of truth-present frames with overlap strictly above theta."""
    grid = np.linspace(0.0, 1.0, 101)
    present = [r for r in records if r.truth.present]
    if not present:
        raise ContractError("success curve needs at least one truth-present frame")
    ovs = np.array([overlap(r.predicted, r.truth) if r.predicted.present else -1.0
                    for r in present])
    values = np.array([np.count_nonzero(ovs > t) for t in grid], dtype=np.float64)
    return MetricCurve("success", grid, values / len(present))


def precision_curve(records: list[TrackRecord]) -> MetricCurve:
    """Fraction of truth-present frames with center distance below rho."""
    grid = np.linspace(0.0, 50.0, 51)
    present = [r for r in records if r.truth.present]
    if not present:
        raise ContractError("precision curve needs at least one truth-present frame")
    dists = np.array([center_distance(r.predicted, r.truth)
                      if r.predicted.present else np.inf
                      for r in present])
    values = np.array([np.count_nonzero(dists < p) for p in grid], dtype=np.float64)
    return MetricCurve("precision", grid, values / len(present))


def accuracy_curve(records: list[TrackRecord]) -> MetricCurve:
    """Over all frames: predicted center inside the phi-scaled truth box,
    or a correctly reported absence."""
    grid = np.linspace(0.1, 2.0, 39)
    if not records:
        raise ContractError("accuracy curve needs at least one frame")
    values = np.zeros_like(grid)
    for r in records:
        if not r.truth.present:
            if not r.predicted.present:
                values += 1.0
            continue
        if not r.predicted.present:
            continue
        (pcx, pcy) = r.predicted.center
        (tcx, tcy) = r.truth.center
        dx, dy = abs(pcx - tcx), abs(pcy - tcy)
        values += (dx <= grid * r.truth.w / 2.0) & (dy <= grid * r.truth.h / 2.0)
    return MetricCurve("accuracy", grid, values / len(records))


def presence_confusion(records: list[TrackRecord]) -> dict[str, int]:
    tp = tn = fp = fn = 0
    for r in records:
        if r.truth.present:
            if r.predicted.present:
                tp += 1
            else:
                fn += 1
        else:
            if r.predicted.present:
                fp += 1
            else:
                tn += 1
    return {"tp": tp, "tn": tn, "fp": fp, "fn": fn}


def evaluate_records(records: list[TrackRecord]) -> dict:
    """All measures in one summary dict (curves included as lists)."""
    succ = success_curve(records)
    prec = precision_curve(records)
    acc = accuracy_curve(records)
    return {
        "frames": len(records),
        "success_auc": succ.auc,
        "precision_at_20": prec.value_at(20.0),
        "accuracy_at_1": acc.value_at(1.0),
        "confusion": presence_confusion(records),
        "curves": {
            c.name: {"grid": c.grid.tolist(), "values": c.values.tolist()}
            for c in (succ, prec, acc)
        },
    }


def write_curves_csv(path: str | Path, curve: MetricCurve):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["parameter", "value"])
        for g, v in zip(curve.grid, curve.values):
            wr.writerow([f"{g:.6f}", f"{v:.6f}"])


def write_summary_json(path: str | Path, summary: dict):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(summary, indent=2, sort_keys=True))


def read_result_log(path: str | Path) -> list[BoundingBox]:
    """Predicted boxes from a tracker result log, in frame order."""
    boxes = []
    with open(path, newline="") as f:
        rd = csv.reader(f)
        header = next(rd, None)
        if header is None or header[0] != "frame_index":
            raise ContractError(f"{path}: not a tracker result log")
        for row in rd:
            present = int(row[1]) == 1
            if present:
                boxes.append(BoundingBox(float(row[2]), float(row[3]),
                                         float(row[4]), float(row[5]), True))
            else:
                boxes.append(BoundingBox.absent())
    return boxes


def records_from(predicted: list[BoundingBox],
                 truth: list[BoundingBox]) -> list[TrackRecord]:
    if len(predicted) != len(truth):
        raise ContractError(
            f"{len(predicted)} predictions for {len(truth)} truth boxes")
    return [TrackRecord(p, t) for p, t in zip(predicted, truth)]
