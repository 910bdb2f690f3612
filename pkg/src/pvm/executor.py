"""Deterministic lockstep execution of the unit pyramid.

Every global step runs three phases separated by barriers:

  predict  each enabled unit runs unit_predict on its stored signal and
           context snapshots and publishes hidden + readout vectors;
  train    each unit collects its fresh signal (an image tile, or the
           hidden vectors just published by the units below it), enabled
           units score and train their pending prediction against it, and
           the fresh signal becomes the unit's stored snapshot;
  context  each unit gathers its context sources from the published arena
           into its context snapshot, zero-filling categories that the
           schedule has not enabled yet.

Within a phase a unit reads only data written in earlier phases or earlier
steps, and writes only its own slots, so any static partition of units over
workers produces bit-identical results. Workers are long-lived forked
processes sharing the arenas; units are assigned round-robin by index. The
published arena is written in the predict phase and only read afterwards,
which gives the same isolation as double buffering. A controller thread
drives the barriers, handles I/O, and performs all cross-unit reductions in
fixed unit order so worker count never affects a single bit of state.

With workers=1 no processes are spawned and the controller runs the three
phases inline; the arithmetic is the same code path either way.
"""

from __future__ import annotations

import ctypes
import multiprocessing
from dataclasses import dataclass
from multiprocessing.sharedctypes import RawArray

import numpy as np

from . import unit as unit_ops
from .config import PvmConfig
from .errors import ConfigError, ContractError, PvmError
from .mlp import LearningRates, MlpWeights
from .schedule import SchedulePoint, schedule_at
from .topology import ContextKind, TopologySpec
from .unit import UnitInput, UnitState

# Control arena slots.
_CMD = 0          # 1.0 run a step, 0.0 shut down
_STEP = 1
_SUPERVISED = 2
_LATERAL_ON = 3
_FEEDBACK_ON = 4
_JOINT = 5
_READOUT_MIX = 6
_LAYER_BASE = 8   # then [enabled, lr_predict, lr_readout] per layer

_KIND_CODE = {ContextKind.SELF: 0, ContextKind.LATERAL: 1,
              ContextKind.FEEDBACK: 2, ContextKind.TOPMOST: 3}

_BARRIER_TIMEOUT = 600.0


@dataclass
class StepOutputs:
    step: int
    layer_p_errors: np.ndarray
    layer_r_errors: np.ndarray


def _shared(n: int) -> np.ndarray:
    raw = RawArray(ctypes.c_double, int(n))
    return np.frombuffer(raw, dtype=np.float64)


def derive_unit_seeds(seed: int, unit_count: int) -> np.ndarray:
    """Per-unit init seeds, a fixed function of the system seed."""
    rng = np.random.default_rng(seed)
    return rng.integers(0, 2 ** 62, size=unit_count)


class System:
    """All mutable model state, laid out in shared float64 arenas."""

    def __init__(self, config: PvmConfig, topology: TopologySpec):
        self.config = config
        self.topology = topology
        n = topology.unit_count
        hidden = topology.hidden_size

        self._weight_len = 0
        self._weight_offsets = []
        for g in topology.units:
            input_size = 4 * g.signal_size + g.context_size
            wh = (hidden, input_size + 1)
            wp = (g.signal_size, hidden + 1)
            wm = (g.readout_size, hidden + 1)
            self._weight_offsets.append((self._weight_len, wh, wp, wm))
            self._weight_len += wh[0] * wh[1] + wp[0] * wp[1] + wm[0] * wm[1]

        sig_total = sum(g.signal_size for g in topology.units)
        ctx_total = sum(g.context_size for g in topology.units)
        ro_total = sum(g.readout_size for g in topology.units)

        self.weights = _shared(self._weight_len)
        self.buffers = _shared(3 * sig_total)       # prev_signal, integral, prev_prediction
        self.signals = _shared(sig_total)            # stored signal snapshots S
        self.contexts = _shared(ctx_total)           # stored context snapshots C
        self.pub_hidden = _shared(n * hidden)
        self.pub_readout = _shared(ro_total)
        self.frame = _shared(config.frame_height * config.frame_width * 3)
        self.targets = _shared(ro_total)
        self.err_p = _shared(n)
        self.err_r = _shared(n)
        self.control = _shared(_LAYER_BASE + 3 * len(topology.layer_grids))

        self.frame_view = self.frame.reshape(config.frame_height, config.frame_width, 3)
        self.sig_views: list[np.ndarray] = []
        self.ctx_views: list[np.ndarray] = []
        self.pub_h_views: list[np.ndarray] = []
        self.pub_r_views: list[np.ndarray] = []
        self.target_views: list[np.ndarray] = []
        self.units: list[UnitState] = []

        s_off = c_off = r_off = 0
        for g in topology.units:
            u = g.index
            self.sig_views.append(self.signals[s_off:s_off + g.signal_size])
            self.ctx_views.append(self.contexts[c_off:c_off + g.context_size])
            self.pub_h_views.append(self.pub_hidden[u * hidden:(u + 1) * hidden])
            self.pub_r_views.append(self.pub_readout[r_off:r_off + g.readout_size])
            self.target_views.append(self.targets[r_off:r_off + g.readout_size])

            base, wh, wp, wm = self._weight_offsets[u]
            wh_n, wp_n = wh[0] * wh[1], wp[0] * wp[1]
            buf_base = 3 * s_off
            unit_buffers = {
                "w_hidden": self.weights[base:base + wh_n].reshape(wh),
                "w_predict": self.weights[base + wh_n:base + wh_n + wp_n].reshape(wp),
                "w_readout": self.weights[base + wh_n + wp_n:
                                          base + wh_n + wp_n + wm[0] * wm[1]].reshape(wm),
                "prev_signal": self.buffers[buf_base:buf_base + g.signal_size],
                "integral": self.buffers[buf_base + g.signal_size:
                                         buf_base + 2 * g.signal_size],
                "prev_prediction": self.buffers[buf_base + 2 * g.signal_size:
                                                buf_base + 3 * g.signal_size],
                "published_hidden": self.pub_h_views[u],
                "published_readout": self.pub_r_views[u],
            }
            self.units.append(unit_buffers)   # placeholder, replaced below
            s_off += g.signal_size
            c_off += g.context_size
            r_off += g.readout_size

        self.layer_of = np.array([g.layer for g in topology.units], dtype=np.int64)
        tile = config.tile_size
        self.tile_rects = {}
        for g in topology.units:
            if g.layer == 0:
                self.tile_rects[g.index] = (g.gy * tile, (g.gy + 1) * tile,
                                            g.gx * tile, (g.gx + 1) * tile)
        self.ctx_plan = []
        for u in range(n):
            srcs = topology.context_sources[u]
            self.ctx_plan.append([(s.unit, _KIND_CODE[s.kind]) for s in srcs])
        self._step = 0

    @classmethod
    def build(cls, config: PvmConfig, topology: TopologySpec) -> "System":
        """Fresh system: seeded weights, every buffer at 0.5, step 0."""
        sys = cls(config, topology)
        unit_seeds = derive_unit_seeds(config.seed, topology.unit_count)
        for g in topology.units:
            sys.units[g.index] = unit_ops.init_unit(
                signal_size=g.signal_size,
                context_size=g.context_size,
                hidden_size=topology.hidden_size,
                readout_size=g.readout_size,
                tau=config.tau,
                seed=int(unit_seeds[g.index]),
                buffers=sys.units[g.index],
            )
        sys.signals[:] = 0.5
        sys.contexts[:] = 0.5
        return sys

    def _rewrap_units(self):
        """Replace buffer dicts with UnitState objects sharing the views."""
        for g in self.topology.units:
            b = self.units[g.index]
            if isinstance(b, UnitState):
                continue
            w = MlpWeights(b["w_hidden"], b["w_predict"], b["w_readout"])
            st = UnitState(
                weights=w, tau=self.config.tau,
                prev_signal=b["prev_signal"], integral=b["integral"],
                prev_prediction=b["prev_prediction"],
                published_hidden=b["published_hidden"],
                published_readout=b["published_readout"],
            )
            from .mlp import alloc_activations
            st.act = alloc_activations(w)
            self.units[g.index] = st

    @property
    def step_index(self) -> int:
        return self._step

    @step_index.setter
    def step_index(self, value: int):
        self._step = int(value)

    def checkpoint_arrays(self) -> list[tuple[str, np.ndarray]]:
        """Arenas in fixed save order. Layout is derivable from the config."""
        return [
            ("weights", self.weights),
            ("buffers", self.buffers),
            ("signals", self.signals),
            ("contexts", self.contexts),
            ("pub_hidden", self.pub_hidden),
            ("pub_readout", self.pub_readout),
        ]

    def readout_snapshot(self) -> list[np.ndarray]:
        """Copies of every unit's published readout vector."""
        return [v.copy() for v in self.pub_r_views]

    def collect_signal(self, u: int) -> np.ndarray:
        """Fresh signal for unit u: an image tile or children's hiddens."""
        if self.layer_of[u] == 0:
            y0, y1, x0, x1 = self.tile_rects[u]
            return self.frame_view[y0:y1, x0:x1, :].ravel()
        children = self.topology.feedforward[u]
        return np.concatenate([self.pub_h_views[c] for c in children])


def build_system(config: PvmConfig, topology: TopologySpec) -> System:
    sys = System.build(config, topology)
    sys._rewrap_units()
    return sys


def _apply_point(control: np.ndarray, point: SchedulePoint, joint: bool,
                 readout_mix: float, lr_readout_override: float | None,
                 lr_predict_zero: bool, force_all_on: bool):
    control[_LATERAL_ON] = 1.0 if (point.lateral_on or force_all_on) else 0.0
    control[_FEEDBACK_ON] = 1.0 if (point.feedback_on or force_all_on) else 0.0
    control[_JOINT] = 1.0 if joint else 0.0
    control[_READOUT_MIX] = readout_mix
    for k, phase in enumerate(point.per_layer):
        enabled = phase.enabled or force_all_on
        lr_p = 0.0 if lr_predict_zero else phase.lr
        lr_r = phase.lr if lr_readout_override is None else lr_readout_override
        base = _LAYER_BASE + 3 * k
        control[base] = 1.0 if enabled else 0.0
        control[base + 1] = lr_p if enabled else 0.0
        control[base + 2] = lr_r if enabled else 0.0


def _phase_predict(sys: System, owned: list[int]):
    control = sys.control
    for u in owned:
        if control[_LAYER_BASE + 3 * sys.layer_of[u]] == 0.0:
            continue
        unit_ops.unit_predict(sys.units[u],
                              UnitInput(sys.sig_views[u], sys.ctx_views[u]))


def _phase_train(sys: System, owned: list[int]):
    control = sys.control
    supervised = control[_SUPERVISED] != 0.0
    joint = control[_JOINT] != 0.0
    mix = control[_READOUT_MIX]
    for u in owned:
        fresh = sys.collect_signal(u)
        base = _LAYER_BASE + 3 * sys.layer_of[u]
        if control[base] != 0.0:
            lr = LearningRates(predict=control[base + 1], readout=control[base + 2])
            target = sys.target_views[u] if supervised else None
            p_err, r_err = unit_ops.unit_train(sys.units[u], fresh, target,
                                               lr, joint, mix)
            sys.err_p[u] = p_err
            sys.err_r[u] = r_err if r_err is not None else np.nan
        sys.sig_views[u][:] = fresh


def _phase_context(sys: System, owned: list[int]):
    control = sys.control
    h = sys.topology.hidden_size
    kind_on = (True,
               control[_LATERAL_ON] != 0.0,
               control[_FEEDBACK_ON] != 0.0,
               control[_FEEDBACK_ON] != 0.0)
    for u in owned:
        ctx = sys.ctx_views[u]
        for j, (src, kind) in enumerate(sys.ctx_plan[u]):
            block = ctx[j * h:(j + 1) * h]
            if kind_on[kind]:
                block[:] = sys.pub_h_views[src]
            else:
                block[:] = 0.0


def _worker_main(executor: "Executor", worker_id: int):
    sys = executor.system
    owned = executor.owned_units(worker_id)
    barrier = executor._barrier
    while True:
        barrier.wait(_BARRIER_TIMEOUT)
        if sys.control[_CMD] == 0.0:
            return
        _phase_predict(sys, owned)
        barrier.wait(_BARRIER_TIMEOUT)
        _phase_train(sys, owned)
        barrier.wait(_BARRIER_TIMEOUT)
        _phase_context(sys, owned)
        barrier.wait(_BARRIER_TIMEOUT)


class Executor:
    """Drives a System step by step, serially or across forked workers.

    regime "joint" follows the staged schedule with shared learning rates on
    both heads and joint hidden updates. regime "prime" freezes the
    predictive weights, forces every layer and context category on, and
    trains only the readout head at a constant rate.
    """

    def __init__(self, system: System, workers: int = 1,
                 regime: str = "joint", readout_lr: float | None = None):
        if workers < 1:
            raise ConfigError(f"workers must be >= 1, got {workers}")
        if regime not in ("joint", "prime"):
            raise ConfigError(f"unknown regime {regime!r}")
        if regime == "prime" and readout_lr is None:
            raise ConfigError("prime regime requires a readout learning rate")
        self.system = system
        self.workers = workers
        self.regime = regime
        self.readout_lr = readout_lr
        self._procs: list[multiprocessing.Process] = []
        self._barrier = None
        self._started = False

    def owned_units(self, worker_id: int) -> list[int]:
        return list(range(worker_id, self.system.topology.unit_count, self.workers))

    def start(self):
        if self._started:
            return
        self._started = True
        if self.workers == 1:
            return
        ctx = multiprocessing.get_context("fork")
        self._barrier = ctx.Barrier(self.workers + 1)
        self.system.control[_CMD] = 1.0
        for wid in range(self.workers):
            p = ctx.Process(target=_worker_main, args=(self, wid), daemon=True)
            p.start()
            self._procs.append(p)

    def close(self):
        if self._procs:
            self.system.control[_CMD] = 0.0
            try:
                self._barrier.wait(_BARRIER_TIMEOUT)
            except Exception:
                pass
            for p in self._procs:
                p.join(timeout=30)
                if p.is_alive():
                    p.terminate()
            self._procs = []
        self._started = False

    def __enter__(self):
        self.start()
        return self

    def __exit__(self, *exc):
        self.close()
        return False

    def _schedule_point(self, step: int) -> SchedulePoint:
        return schedule_at(self.system.config.schedule, step)

    def _load_control(self, mode: str, supervised: bool):
        sys = self.system
        point = self._schedule_point(sys.step_index)
        if self.regime == "prime":
            _apply_point(sys.control, point, joint=False,
                         readout_mix=sys.config.readout_mix,
                         lr_readout_override=0.0 if mode == "eval" else self.readout_lr,
                         lr_predict_zero=True, force_all_on=True)
        else:
            _apply_point(sys.control, point, joint=True,
                         readout_mix=sys.config.readout_mix,
                         lr_readout_override=0.0 if mode == "eval" else None,
                         lr_predict_zero=(mode == "eval"),
                         force_all_on=False)
        sys.control[_SUPERVISED] = 1.0 if supervised else 0.0
        sys.control[_STEP] = float(sys.step_index)

    def step(self, frame: np.ndarray,
             supervision: list[np.ndarray] | None = None,
             mode: str = "train") -> StepOutputs:
        """Run one global step on a frame.

        supervision is a per-unit list of readout target vectors (what
        rasterize_targets produces) or None for unsupervised/eval steps.
        """
        if mode not in ("train", "eval"):
            raise ContractError(f"unknown mode {mode!r}")
        sys = self.system
        cfg = sys.config
        if frame.shape != (cfg.frame_height, cfg.frame_width, 3):
            raise ContractError(
                f"frame shape {frame.shape} does not match config "
                f"{(cfg.frame_height, cfg.frame_width, 3)}")
        fmin, fmax = float(np.min(frame)), float(np.max(frame))
        if not (np.isfinite(fmin) and np.isfinite(fmax)) or fmin < 0.0 or fmax > 1.0:
            raise ContractError("frame values must lie in [0, 1]")
        sys.frame_view[:] = frame
        if supervision is not None:
            if len(supervision) != sys.topology.unit_count:
                raise ContractError("supervision must have one target per unit")
            for u, t in enumerate(supervision):
                if t.shape != sys.target_views[u].shape:
                    raise ContractError(f"unit {u}: readout target length mismatch")
                sys.target_views[u][:] = t
        self._load_control(mode, supervised=supervision is not None)

        if not self._started:
            self.start()
        if self.workers == 1:
            all_units = list(range(sys.topology.unit_count))
            _phase_predict(sys, all_units)
            _phase_train(sys, all_units)
            _phase_context(sys, all_units)
        else:
            sys.control[_CMD] = 1.0
            try:
                for _ in range(4):
                    self._barrier.wait(_BARRIER_TIMEOUT)
            except Exception as e:
                self.close()
                raise PvmError(f"worker barrier failed: {e!r}") from e

        n_layers = len(sys.topology.layer_grids)
        p_errs = np.full(n_layers, np.nan)
        r_errs = np.full(n_layers, np.nan)
        for k in range(n_layers):
            if sys.control[_LAYER_BASE + 3 * k] == 0.0:
                continue
            lu = sys.topology.layer_units(k)
            p_errs[k] = float(np.mean(sys.err_p[lu.start:lu.stop]))
            if supervision is not None:
                r_errs[k] = float(np.mean(sys.err_r[lu.start:lu.stop]))
        executed = sys.step_index
        sys.step_index = executed + 1
        return StepOutputs(step=executed, layer_p_errors=p_errs, layer_r_errors=r_errs)


def reset_readout_weights(system: System):
    """Reinitialize every readout matrix from the system seed.

    Used when priming a fresh readout on a frozen substrate: hidden and
    predict matrices are untouched, so a checkpoint's predictive behavior
    is preserved bit for bit.
    """
    from .mlp import init_mlp

    topo = system.topology
    unit_seeds = derive_unit_seeds(system.config.seed, topo.unit_count)
    for g in topo.units:
        fresh = init_mlp(4 * g.signal_size + g.context_size,
                         topo.hidden_size, g.signal_size, g.readout_size,
                         int(unit_seeds[g.index]))
        np.copyto(system.units[g.index].weights.w_readout, fresh.w_readout)


@dataclass
class TrainReport:
    final_step: int
    checkpoints: list
    log_rows: list
    log_path: object = None


def run_training(executor: Executor, sequences, total_steps: int, *,
                 out_dir=None, checkpoint_every: int = 0, log_every: int = 1000,
                 synthetic=None, progress_cb=None) -> TrainReport:
    """Drive an executor over a frame stream for total_steps steps.

    Frames come from the sequences in order and wrap around; the frame for
    a global step is step mod total_frames, so resuming from a checkpoint
    continues the exact stream an uninterrupted run would have seen.
    Labeled sequences supervise the readout head (absent frames rasterize
    to all-0.5 targets); unlabeled ones train prediction only.

    Writes periodic checkpoints and a training log CSV of windowed mean
    errors per layer when out_dir is given. The loop itself uses no
    randomness.
    """
    from pathlib import Path

    from .checkpoint import save_checkpoint
    from .dataset import rasterize_targets

    frames = []
    labels = []
    for seq in sequences:
        frames.extend(seq.frames)
        labels.extend(seq.labels if seq.labels is not None
                      else [None] * len(seq.frames))
    if not frames:
        raise ContractError("training needs at least one frame")
    if total_steps < 1:
        raise ContractError("total_steps must be >= 1")

    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    topo = executor.system.topology
    target_cache: dict[int, list | None] = {}

    def targets_for(fidx: int):
        if fidx not in target_cache:
            lab = labels[fidx]
            target_cache[fidx] = None if lab is None else rasterize_targets(lab, topo)
        return target_cache[fidx]

    n_layers = len(topo.layer_grids)
    p_sum = np.zeros(n_layers)
    p_cnt = np.zeros(n_layers)
    r_sum = np.zeros(n_layers)
    r_cnt = np.zeros(n_layers)
    log_rows = []
    checkpoints = []

    executor.start()
    for _ in range(total_steps):
        fidx = executor.system.step_index % len(frames)
        out = executor.step(frames[fidx], targets_for(fidx), mode="train")
        done = out.step + 1

        valid_p = np.isfinite(out.layer_p_errors)
        p_sum[valid_p] += out.layer_p_errors[valid_p]
        p_cnt[valid_p] += 1
        valid_r = np.isfinite(out.layer_r_errors)
        r_sum[valid_r] += out.layer_r_errors[valid_r]
        r_cnt[valid_r] += 1

        if done % log_every == 0:
            row = {"step": done}
            for k in range(n_layers):
                row[f"p_err_l{k}"] = p_sum[k] / p_cnt[k] if p_cnt[k] else float("nan")
                row[f"r_err_l{k}"] = r_sum[k] / r_cnt[k] if r_cnt[k] else float("nan")
            log_rows.append(row)
            p_sum[:] = p_cnt[:] = r_sum[:] = r_cnt[:] = 0.0
            if progress_cb is not None:
                progress_cb(done, row)
        if checkpoint_every and out_dir is not None and done % checkpoint_every == 0:
            checkpoints.append(save_checkpoint(
                executor.system, out_dir / f"step_{done:010d}.pvmckpt", synthetic))

    log_path = None
    if out_dir is not None:
        import csv

        log_path = out_dir / "training_log.csv"
        cols = ["step"] + [f"p_err_l{k}" for k in range(n_layers)] \
            + [f"r_err_l{k}" for k in range(n_layers)]
        with open(log_path, "w", newline="") as f:
            wr = csv.writer(f)
            wr.writerow(cols)
            for row in log_rows:
                wr.writerow([row["step"]] + [f"{row[c]:.8f}" for c in cols[1:]])
    return TrainReport(final_step=executor.system.step_index,
                       checkpoints=checkpoints, log_rows=log_rows,
                       log_path=log_path)
