"""Turning published readouts into bounding boxes.

Each layer's unit readouts are square patches superimposed on a per-layer
canvas at evenly spaced anchors; overlaps average, never-covered cells stay
0.0, and the canvas is bilinearly resampled to the common heatmap size when
it differs. The per-layer heatmaps are averaged and scaled by 255, and a
box is extracted around the peak: the target is declared absent unless the
peak clears the heatmap median by a fixed threshold, otherwise the
connected component (8-connectivity) containing the peak above the midpoint
cutoff is boxed tightly and scaled to frame coordinates.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import ContractError
from .topology import TopologySpec

DETECTION_THRESHOLD = 32.0


@dataclass
class BoundingBox:
    x: float = 0.0
    y: float = 0.0
    w: float = 0.0
    h: float = 0.0
    present: bool = True

    @staticmethod
    def absent() -> "BoundingBox":
        return BoundingBox(0.0, 0.0, 0.0, 0.0, present=False)

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    @property
    def area(self) -> float:
        return self.w * self.h


@dataclass
class Heatmap:
    values: np.ndarray          # (height, width)
    scale: str                  # "unit" for [0,1], "byte" for [0,255]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


def resample_bilinear(src: np.ndarray, size: int) -> np.ndarray:
    """Pixel-center bilinear resample of a square array to size x size."""
    n = src.shape[0]
    if n == size:
        return src.copy()
    pos = (np.arange(size) + 0.5) * (n / size) - 0.5
    pos = np.clip(pos, 0.0, n - 1.0)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, n - 1)
    frac = pos - lo
    rows = src[lo][:, lo] * np.outer(1 - frac, 1 - frac) \
        + src[lo][:, hi] * np.outer(1 - frac, frac) \
        + src[hi][:, lo] * np.outer(frac, 1 - frac) \
        + src[hi][:, hi] * np.outer(frac, frac)
    return rows


def assemble_layer_heatmap(topo: TopologySpec, layer: int,
                           readouts: list[np.ndarray]) -> Heatmap:
    """Superimpose one layer's readout patches onto its canvas.

    readouts is indexed by global unit index; each vector is a row-major
    patch_size x patch_size patch.
    """
    if not 0 <= layer < len(topo.layer_grids):
        raise ContractError(f"layer {layer} out of range")
    r = topo.canvas_sizes[layer]
    p = topo.patch_sizes[layer]
    acc = np.zeros((r, r))
    cnt = np.zeros((r, r))
    for u in topo.layer_units(layer):
        g = topo.units[u]
        patch = np.asarray(readouts[u]).reshape(p, p)
        acc[g.anchor_y:g.anchor_y + p, g.anchor_x:g.anchor_x + p] += patch
        cnt[g.anchor_y:g.anchor_y + p, g.anchor_x:g.anchor_x + p] += 1.0
    vals = np.where(cnt > 0, acc / np.maximum(cnt, 1.0), 0.0)
    if r != topo.heatmap_size:
        vals = resample_bilinear(vals, topo.heatmap_size)
    return Heatmap(values=vals, scale="unit")


def combine_heatmaps(maps: list[Heatmap]) -> Heatmap:
    """Average unit-scale layer heatmaps and scale to bytes."""
    if not maps:
        raise ContractError("no heatmaps to combine")
    shape = maps[0].values.shape
    for m in maps:
        if m.values.shape != shape:
            raise ContractError("heatmap shapes differ")
        if m.scale != "unit":
            raise ContractError("combine expects unit-scale heatmaps")
    stacked = np.stack([m.values for m in maps])
    return Heatmap(values=np.mean(stacked, axis=0) * 255.0, scale="byte")


def heatmap_median(values: np.ndarray) -> float:
    """Lower-middle order statistic, matching element (n-1)//2 of the sort."""
    flat = values.ravel()
    k = (flat.size - 1) // 2
    return float(np.partition(flat, k)[k])


def get_bounding_box(hm: Heatmap, threshold: float = DETECTION_THRESHOLD,
                     frame_size: tuple[int, int] = (96, 96)) -> BoundingBox:
    """Extract the target box from a byte-scale combined heatmap.

    Absent unless the peak exceeds the median by more than `threshold`.
    The box tightly covers the connected component (8-connectivity) around
    the peak that clears the midpoint cutoff (max - med) / 2 + med, scaled
    from heatmap cells to frame pixels. The peak is the first maximum in
    row-major order.
    """
    if hm.scale != "byte":
        raise ContractError("box extraction expects a byte-scale heatmap")
    vals = hm.values
    if vals.ndim != 2 or vals.size < 2:
        raise ContractError("heatmap must be 2-D with at least 2 cells")
    if not np.all(np.isfinite(vals)):
        raise ContractError("heatmap contains non-finite values")
    flat = vals.ravel()
    peak_flat = int(np.argmax(flat))
    peak_val = float(flat[peak_flat])
    med = heatmap_median(vals)
    if not peak_val > med + threshold:
        return BoundingBox.absent()
    cutoff = (peak_val - med) * 0.5 + med
    binary = vals > cutoff
    labels, _ = ndimage.label(binary, structure=np.ones((3, 3), dtype=bool))
    lab = labels.ravel()[peak_flat]
    mask = labels == lab
    row_any = np.any(mask, axis=1)
    col_any = np.any(mask, axis=0)
    rmin, rmax = np.flatnonzero(row_any)[[0, -1]]
    cmin, cmax = np.flatnonzero(col_any)[[0, -1]]
    sx = frame_size[0] / vals.shape[1]
    sy = frame_size[1] / vals.shape[0]
    return BoundingBox(
        x=float(cmin * sx), y=float(rmin * sy),
        w=float((cmax - cmin + 1) * sx), h=float((rmax - rmin + 1) * sy),
        present=True)


@dataclass
class TrackResult:
    frame_index: int
    box: BoundingBox
    peak: float
    median: float
    combined: Heatmap | None = field(default=None, repr=False)
    per_layer: list[Heatmap] | None = field(default=None, repr=False)


def track_frame(executor, frame: np.ndarray, settle_steps: int | None = None,
                keep_heatmaps: bool = False) -> TrackResult:
    """Run settle_steps evaluation steps on one frame and box the target.

    Unit state carries over between frames; nothing is reset, the pyramid
    just keeps settling on whatever it is shown.
    """
    sys = executor.system
    n = settle_steps if settle_steps is not None else sys.config.settle_steps
    if n < 1:
        raise ContractError("settle_steps must be >= 1")
    for _ in range(n):
        executor.step(frame, None, mode="eval")
    readouts = sys.readout_snapshot()
    layer_maps = [assemble_layer_heatmap(sys.topology, k, readouts)
                  for k in range(len(sys.topology.layer_grids))]
    combined = combine_heatmaps(layer_maps)
    box = get_bounding_box(combined, DETECTION_THRESHOLD,
                           (sys.config.frame_width, sys.config.frame_height))
    med = heatmap_median(combined.values)
    return TrackResult(
        frame_index=-1, box=box,
        peak=float(np.max(combined.values)), median=med,
        combined=combined if keep_heatmaps else None,
        per_layer=layer_maps if keep_heatmaps else None)


def run_sequence_tracking(executor, frames: list[np.ndarray],
                          settle_steps: int | None = None,
                          keep_heatmaps: bool = False,
                          progress_cb=None) -> list[TrackResult]:
    results = []
    for i, frame in enumerate(frames):
        r = track_frame(executor, frame, settle_steps, keep_heatmaps)
        r.frame_index = i
        results.append(r)
        if progress_cb is not None:
            progress_cb(i + 1, len(frames))
    return results


def write_result_log(path: str | Path, results: list[TrackResult]):
    """CSV log: frame_index, present, x, y, w, h, peak, median."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["frame_index", "present", "x", "y", "w", "h", "peak", "median"])
        for r in results:
            b = r.box
            wr.writerow([r.frame_index, int(b.present),
                         f"{b.x:.4f}", f"{b.y:.4f}", f"{b.w:.4f}", f"{b.h:.4f}",
                         f"{r.peak:.4f}", f"{r.median:.4f}"])


def baseline_boxes(kind: str, truth: list[BoundingBox],
                   frame_size: tuple[int, int], perturb: float = 0.4,
                   seed: int = 0) -> list[BoundingBox]:
    """Reference trackers to score the learned one against.

    null      holds the first present ground-truth box and always reports
              present (it assumes the target never leaves);
    center    a fixed box of a tenth of the frame dimensions, centered;
    perturbed_gt
              ground truth with position and size independently jittered,
              uniformly within `perturb` of the corresponding box dimension;
              absent frames stay absent.
    """
    fw, fh = frame_size
    if kind == "null":
        first = next((b for b in truth if b.present), None)
        if first is None:
            return [BoundingBox.absent() for _ in truth]
        held = BoundingBox(first.x, first.y, first.w, first.h, present=True)
        return [BoundingBox(held.x, held.y, held.w, held.h, True) for _ in truth]
    if kind == "center":
        w, h = 0.1 * fw, 0.1 * fh
        return [BoundingBox((fw - w) / 2.0, (fh - h) / 2.0, w, h, True)
                for _ in truth]
    if kind == "perturbed_gt":
        rng = np.random.default_rng(seed)
        out = []
        for b in truth:
            if not b.present:
                out.append(BoundingBox.absent())
                continue
            ux, uy, uw, uh = rng.uniform(-perturb, perturb, size=4)
            out.append(BoundingBox(
                x=b.x + ux * b.w, y=b.y + uy * b.h,
                w=b.w * (1.0 + uw), h=b.h * (1.0 + uh), present=True))
        return out
    raise ContractError(f"unknown baseline kind {kind!r}")
