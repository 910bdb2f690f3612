"""Sequence loading, synthetic generation, tiling, and target rasterizing.

A sequence on disk is a directory of numbered image frames plus an optional
labels.csv with one row per frame: frame_index, present, x, y, w, h in
source-resolution pixels. Frames are resized to the model resolution on
load and labels are rescaled to match, so everything downstream works in
model frame coordinates.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .config import SyntheticSpec
from .errors import ContractError, DatasetError
from .topology import TopologySpec
from .tracker import BoundingBox

_IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


@dataclass
class LabeledSequence:
    name: str
    frames: list[np.ndarray]                 # each (h, w, 3) float64 in [0, 1]
    labels: list[BoundingBox] | None = None  # None when unlabeled

    def __post_init__(self):
        if self.labels is not None and len(self.labels) != len(self.frames):
            raise DatasetError(
                f"{self.name}: {len(self.labels)} labels for {len(self.frames)} frames")

    def __len__(self) -> int:
        return len(self.frames)


def _parse_labels(path: Path, n_frames: int) -> list[BoundingBox]:
    boxes: dict[int, BoundingBox] = {}
    with open(path, newline="") as f:
        for lineno, row in enumerate(csv.reader(f), start=1):
            if not row or row[0].strip().startswith("#"):
                continue
            if row[0].strip() == "frame_index":
                continue
            if len(row) != 6:
                raise DatasetError(f"{path}:{lineno}: expected 6 columns, got {len(row)}")
            try:
                idx = int(row[0])
                present = int(row[1])
                x, y, w, h = (float(v) for v in row[2:])
            except ValueError as e:
                raise DatasetError(f"{path}:{lineno}: {e}") from e
            if idx in boxes:
                raise DatasetError(f"{path}:{lineno}: duplicate frame index {idx}")
            if present not in (0, 1):
                raise DatasetError(f"{path}:{lineno}: present must be 0 or 1")
            if present and (w <= 0 or h <= 0):
                raise DatasetError(f"{path}:{lineno}: present box must have positive area")
            boxes[idx] = (BoundingBox(x, y, w, h, True) if present
                          else BoundingBox.absent())
    if sorted(boxes) != list(range(n_frames)):
        raise DatasetError(
            f"{path}: labels must cover frames 0..{n_frames - 1} exactly")
    return [boxes[i] for i in range(n_frames)]


def load_sequence(path: str | Path, frame_size: tuple[int, int]) -> LabeledSequence:
    """Load one sequence directory, resizing frames to frame_size (w, h)."""
    path = Path(path)
    if not path.is_dir():
        raise DatasetError(f"{path} is not a directory")
    files = sorted(p for p in path.iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES)
    if not files:
        raise DatasetError(f"{path}: no image frames found")
    tw, th = frame_size
    frames = []
    source_size = None
    for p in files:
        try:
            img = Image.open(p).convert("RGB")
        except Exception as e:
            raise DatasetError(f"cannot read frame {p}: {e}") from e
        if source_size is None:
            source_size = img.size
        elif img.size != source_size:
            raise DatasetError(f"{path}: frame sizes differ ({img.size} vs {source_size})")
        if img.size != (tw, th):
            img = img.resize((tw, th), Image.BILINEAR)
        frames.append(np.asarray(img, dtype=np.float64) / 255.0)

    labels = None
    label_path = path / "labels.csv"
    if label_path.exists():
        labels = _parse_labels(label_path, len(frames))
        sx = tw / source_size[0]
        sy = th / source_size[1]
        if sx != 1.0 or sy != 1.0:
            labels = [BoundingBox(b.x * sx, b.y * sy, b.w * sx, b.h * sy, True)
                      if b.present else BoundingBox.absent()
                      for b in labels]
    return LabeledSequence(name=path.name, frames=frames, labels=labels)


def find_sequence_dirs(path: str | Path) -> list[Path]:
    """A sequence directory itself, or a directory of sequence directories."""
    path = Path(path)
    if not path.is_dir():
        raise DatasetError(f"{path} is not a directory")
    if any(p.suffix.lower() in _IMAGE_SUFFIXES for p in path.iterdir()):
        return [path]
    subs = sorted(p for p in path.iterdir()
                  if p.is_dir() and any(q.suffix.lower() in _IMAGE_SUFFIXES
                                        for q in p.iterdir()))
    if not subs:
        raise DatasetError(f"{path}: no frames or sequence subdirectories found")
    return subs


def save_sequence(seq: LabeledSequence, path: str | Path):
    """Write frames as PNGs plus labels.csv in the current coordinates."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(seq.frames):
        arr = np.clip(np.round(frame * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(arr, "RGB").save(path / f"{i:06d}.png")
    if seq.labels is not None:
        with open(path / "labels.csv", "w", newline="") as f:
            wr = csv.writer(f)
            wr.writerow(["frame_index", "present", "x", "y", "w", "h"])
            for i, b in enumerate(seq.labels):
                wr.writerow([i, int(b.present), f"{b.x:.4f}", f"{b.y:.4f}",
                             f"{b.w:.4f}", f"{b.h:.4f}"])


def tile_frame(frame: np.ndarray, tile: int) -> np.ndarray:
    """Cut a frame into row-major tiles, each flattened in C order.

    Row t of the result is the tile at grid position (t % gw, t // gw),
    matching unit index order within layer 0.
    """
    h, w, c = frame.shape
    if h % tile or w % tile:
        raise ContractError(f"tile {tile} does not divide frame {w}x{h}")
    gh, gw = h // tile, w // tile
    out = np.empty((gh * gw, tile * tile * c))
    for gy in range(gh):
        for gx in range(gw):
            out[gy * gw + gx] = frame[gy * tile:(gy + 1) * tile,
                                      gx * tile:(gx + 1) * tile, :].ravel()
    return out


def rasterize_targets(box: BoundingBox, topo: TopologySpec) -> list[np.ndarray]:
    """Per-unit readout target patches for one ground-truth box.

    Present: each canvas cell whose frame-space rectangle overlaps the box
    with positive area is 1.0, the rest 0.0. Absent: every cell is 0.5,
    teaching the readout to sit at the midpoint when there is no target.
    """
    targets: list[np.ndarray] = []
    canvases = []
    for layer, r in enumerate(topo.canvas_sizes):
        if not box.present:
            canvases.append(np.full((r, r), 0.5))
            continue
        if box.w <= 0 or box.h <= 0:
            raise ContractError("present box must have positive area")
        cw = topo.frame_width / r
        ch = topo.frame_height / r
        cols = np.arange(r)
        col_hit = (box.x < (cols + 1) * cw) & (box.x + box.w > cols * cw)
        rows_ = np.arange(r)
        row_hit = (box.y < (rows_ + 1) * ch) & (box.y + box.h > rows_ * ch)
        canvases.append(np.outer(row_hit, col_hit).astype(np.float64))
    for g in topo.units:
        canvas = canvases[g.layer]
        p = g.patch_size
        targets.append(canvas[g.anchor_y:g.anchor_y + p,
                              g.anchor_x:g.anchor_x + p].ravel().copy())
    return targets


def synth_sequence(spec: SyntheticSpec, frame_size: tuple[int, int]) -> LabeledSequence:
    """Deterministic synthetic sequences for training and tests.

    bouncing_square: a bright square glides over a fixed noise background,
    bouncing elastically off the frame edges, with a periodic visibility
    cycle (present_frames on, absent_frames off; motion continues while
    hidden). Labels are the exact rendered rectangle. All pixel values are
    multiples of 1/255 so a PNG round trip is lossless.
    """
    w, h = frame_size
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "blank":
        frames = [np.full((h, w, 3), 0.5) for _ in range(spec.frames)]
        return LabeledSequence(f"blank-{spec.seed}", frames,
                               [BoundingBox.absent() for _ in range(spec.frames)])
    if spec.kind == "constant":
        base = rng.integers(0, 256, size=(h, w, 3)).astype(np.float64) / 255.0
        frames = [base.copy() for _ in range(spec.frames)]
        return LabeledSequence(f"constant-{spec.seed}", frames,
                               [BoundingBox.absent() for _ in range(spec.frames)])

    size = spec.square_size
    if size >= min(w, h):
        raise ContractError(f"square_size {size} does not fit frame {w}x{h}")
    background = rng.integers(64, 192, size=(h, w, 3)).astype(np.float64) / 255.0
    color = np.array([255.0, 26.0, 26.0]) / 255.0
    x = (w - size) / 2.0
    y = (h - size) / 2.0
    angle = rng.uniform(0.0, 2.0 * np.pi)
    vx = spec.speed * np.cos(angle)
    vy = spec.speed * np.sin(angle)
    cycle = spec.present_frames + spec.absent_frames

    frames = []
    labels = []
    for i in range(spec.frames):
        x += vx
        y += vy
        if x < 0:
            x, vx = -x, -vx
        if x > w - size:
            x, vx = 2 * (w - size) - x, -vx
        if y < 0:
            y, vy = -y, -vy
        if y > h - size:
            y, vy = 2 * (h - size) - y, -vy
        visible = (i % cycle) < spec.present_frames if cycle else True
        frame = background.copy()
        if visible:
            xi = int(round(x))
            yi = int(round(y))
            xi = min(max(xi, 0), w - size)
            yi = min(max(yi, 0), h - size)
            frame[yi:yi + size, xi:xi + size, :] = color
            labels.append(BoundingBox(float(xi), float(yi), float(size), float(size), True))
        else:
            labels.append(BoundingBox.absent())
        frames.append(frame)
    return LabeledSequence(f"square-{spec.seed}", frames, labels)
