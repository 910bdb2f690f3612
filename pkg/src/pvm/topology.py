"""Static wiring of the unit pyramid.

Layers are rectangular grids of units. Unit indices are layer-major and
row-major within a layer. Between adjacent layers each upper unit watches a
2x2 window of lower units, derived per dimension: a dimension either halves
(lower = 2 * upper, disjoint pairs) or decrements (upper = lower - 1,
overlapping pairs). Grids that fit neither rule in some dimension cannot be
wired and are rejected.

Context edges run sideways and down: every unit hears itself, its 4-neighbor
laterals, the superior units whose window covers it (feedback, the exact
transpose of the feedforward map), and the topmost unit when the final layer
is a single unit. The topmost broadcast is deduplicated against sources
already present.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .errors import TopologyError


class ContextKind(enum.Enum):
    SELF = "self"
    LATERAL = "lateral"
    FEEDBACK = "feedback"
    TOPMOST = "topmost"


@dataclass(frozen=True)
class ContextSource:
    unit: int
    kind: ContextKind


@dataclass(frozen=True)
class UnitGeometry:
    index: int
    layer: int
    gx: int
    gy: int
    signal_size: int
    context_size: int
    patch_size: int
    anchor_x: int
    anchor_y: int

    @property
    def readout_size(self) -> int:
        return self.patch_size * self.patch_size


@dataclass
class TopologySpec:
    layer_grids: list[tuple[int, int]]
    hidden_size: int
    tile_size: int
    frame_width: int
    frame_height: int
    heatmap_size: int
    canvas_sizes: list[int]
    patch_sizes: list[int]
    layer_offsets: list[int]
    unit_count: int
    units: list[UnitGeometry]
    feedforward: dict[int, list[int]]
    lateral: dict[int, list[int]]
    feedback: dict[int, list[int]]
    topmost: int | None
    context_sources: dict[int, list[ContextSource]]

    def layer_units(self, layer: int) -> range:
        start = self.layer_offsets[layer]
        w, h = self.layer_grids[layer]
        return range(start, start + w * h)

    def unit_at(self, layer: int, gx: int, gy: int) -> int:
        w, _ = self.layer_grids[layer]
        return self.layer_offsets[layer] + gy * w + gx


def _window_map(lower: int, upper: int) -> list[list[int]]:
    """Per-dimension fan-in: for each upper coordinate, its lower sources."""
    if lower == 2 * upper:
        return [[2 * i, 2 * i + 1] for i in range(upper)]
    if upper == lower - 1 and upper >= 1:
        return [[i, i + 1] for i in range(upper)]
    raise TopologyError(
        f"no fan-in rule maps a dimension of {lower} onto {upper}; "
        f"the upper grid must halve it or shrink it by one")


def _patch_anchor(g: int, grid: int, canvas: int, patch: int) -> int:
    """Canvas offset for grid position g: evenly spaced, rounded half-up."""
    if grid == 1:
        return (canvas - patch) // 2
    span = canvas - patch
    return (g * span + (grid - 1) // 2) // (grid - 1)


def build_topology(frame_width: int, frame_height: int, tile_size: int,
                   layer_grids: list[tuple[int, int]], hidden_size: int,
                   heatmap_size: int, patch_sizes: list[int],
                   canvas_sizes: list[int]) -> TopologySpec:
    n_layers = len(layer_grids)
    if n_layers < 1:
        raise TopologyError("at least one layer is required")
    if frame_width % tile_size or frame_height % tile_size:
        raise TopologyError(
            f"tile size {tile_size} does not divide frame "
            f"{frame_width}x{frame_height}")
    g0 = (frame_width // tile_size, frame_height // tile_size)
    if tuple(layer_grids[0]) != g0:
        raise TopologyError(
            f"layer 0 grid {layer_grids[0]} must equal frame/tile grid {g0}")
    if len(patch_sizes) != n_layers or len(canvas_sizes) != n_layers:
        raise TopologyError("patch_sizes and canvas_sizes must have one entry per layer")
    for k, (p, r) in enumerate(zip(patch_sizes, canvas_sizes)):
        if not (1 <= p <= r):
            raise TopologyError(f"layer {k}: patch {p} must fit canvas {r}")

    layer_offsets = []
    total = 0
    for w, h in layer_grids:
        if w < 1 or h < 1:
            raise TopologyError("layer grids must be at least 1x1")
        layer_offsets.append(total)
        total += w * h

    # Window maps per adjacent layer pair, then the transposed feedback map.
    feedforward: dict[int, list[int]] = {}
    feedback: dict[int, list[int]] = {i: [] for i in range(total)}
    for k in range(1, n_layers):
        lw, lh = layer_grids[k - 1]
        uw, uh = layer_grids[k]
        xmap = _window_map(lw, uw)
        ymap = _window_map(lh, uh)
        for uy in range(uh):
            for ux in range(uw):
                upper = layer_offsets[k] + uy * uw + ux
                sources = [layer_offsets[k - 1] + ly * lw + lx
                           for ly in ymap[uy] for lx in xmap[ux]]
                feedforward[upper] = sources
                for s in sources:
                    feedback[s].append(upper)
    for u in range(layer_offsets[1] if n_layers > 1 else total):
        feedforward.setdefault(u, [])
    for u in feedback:
        feedback[u].sort()

    lateral: dict[int, list[int]] = {}
    for k, (w, h) in enumerate(layer_grids):
        base = layer_offsets[k]
        for gy in range(h):
            for gx in range(w):
                u = base + gy * w + gx
                neigh = []
                for dy, dx in ((-1, 0), (0, -1), (0, 1), (1, 0)):
                    nx, ny = gx + dx, gy + dy
                    if 0 <= nx < w and 0 <= ny < h:
                        neigh.append(base + ny * w + nx)
                lateral[u] = neigh

    last_w, last_h = layer_grids[-1]
    topmost = layer_offsets[-1] if (last_w, last_h) == (1, 1) else None

    context_sources: dict[int, list[ContextSource]] = {}
    for u in range(total):
        sources = [ContextSource(u, ContextKind.SELF)]
        sources += [ContextSource(v, ContextKind.LATERAL) for v in lateral[u]]
        fb = feedback[u]
        sources += [ContextSource(v, ContextKind.FEEDBACK) for v in fb]
        if topmost is not None and topmost != u and topmost not in fb:
            sources.append(ContextSource(topmost, ContextKind.TOPMOST))
        context_sources[u] = sources

    tile_signal = tile_size * tile_size * 3
    units: list[UnitGeometry] = []
    for k, (w, h) in enumerate(layer_grids):
        base = layer_offsets[k]
        p, r = patch_sizes[k], canvas_sizes[k]
        for gy in range(h):
            for gx in range(w):
                u = base + gy * w + gx
                signal = tile_signal if k == 0 else len(feedforward[u]) * hidden_size
                if hidden_size >= signal:
                    raise TopologyError(
                        f"unit {u}: hidden size {hidden_size} must be smaller "
                        f"than its signal size {signal}")
                units.append(UnitGeometry(
                    index=u, layer=k, gx=gx, gy=gy,
                    signal_size=signal,
                    context_size=len(context_sources[u]) * hidden_size,
                    patch_size=p,
                    anchor_x=_patch_anchor(gx, w, r, p),
                    anchor_y=_patch_anchor(gy, h, r, p),
                ))

    return TopologySpec(
        layer_grids=[tuple(g) for g in layer_grids],
        hidden_size=hidden_size,
        tile_size=tile_size,
        frame_width=frame_width,
        frame_height=frame_height,
        heatmap_size=heatmap_size,
        canvas_sizes=list(canvas_sizes),
        patch_sizes=list(patch_sizes),
        layer_offsets=layer_offsets,
        unit_count=total,
        units=units,
        feedforward=feedforward,
        lateral=lateral,
        feedback=feedback,
        topmost=topmost,
        context_sources=context_sources,
    )
