"""One predictive unit: an MLP plus the temporal buffers feeding it.

A unit watches a small signal (an image tile, or the hidden vectors of the
units below it) and learns to predict that signal's next value. Its MLP
input is the concatenation

    [signal, derivative, integral, error, context]

where the three feature blocks are elementwise transforms of the signal
against state carried between steps:

    derivative = 1/2 + (signal - prev_signal) / 2
    integral   = tau * integral_prev + (1 - tau) * signal
    error      = 1/2 + (prev_prediction - signal) / 2

All of signal and the features live in [0, 1]. prev_prediction is the
prediction of the *current* signal made on the previous step, so `error` is
a true prediction-residual feature.

The unit runs a strict two-beat protocol driven by the executor:
unit_predict consumes the current signal and context and publishes hidden
and readout vectors; unit_train then scores that prediction against the
signal that actually arrived next and applies one SGD step. Buffers commit
during unit_train, after gradients are taken.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import mlp
from .errors import ConfigError, ContractError, ProtocolError
from .mlp import LearningRates, MlpActivations, MlpWeights


@dataclass
class UnitInput:
    signal: np.ndarray
    context: np.ndarray


@dataclass
class UnitState:
    weights: MlpWeights
    tau: float
    prev_signal: np.ndarray
    integral: np.ndarray
    prev_prediction: np.ndarray
    published_hidden: np.ndarray
    published_readout: np.ndarray
    act: MlpActivations | None = field(repr=False, default=None)
    pending: bool = False

    @property
    def signal_size(self) -> int:
        return self.prev_signal.shape[0]

    @property
    def context_size(self) -> int:
        return self.weights.input_size - 4 * self.signal_size


def init_unit(signal_size: int, context_size: int, hidden_size: int,
              readout_size: int, tau: float, seed: int,
              buffers: dict[str, np.ndarray] | None = None) -> UnitState:
    """Fresh unit. All temporal buffers and published vectors start at 0.5.

    `buffers` optionally supplies preallocated arrays (views into a shared
    arena) keyed by field name; missing keys are allocated locally.
    """
    if not 0.0 <= tau < 1.0:
        raise ConfigError(f"tau must be in [0, 1), got {tau}")
    if hidden_size >= signal_size:
        raise ConfigError(
            f"hidden size {hidden_size} must be smaller than signal size {signal_size}")
    input_size = 4 * signal_size + context_size
    weights = mlp.init_mlp(input_size, hidden_size, signal_size, readout_size, seed)
    if buffers is not None:
        for name, arr in (("w_hidden", weights.w_hidden),
                          ("w_predict", weights.w_predict),
                          ("w_readout", weights.w_readout)):
            if name in buffers:
                np.copyto(buffers[name], arr)
        weights = MlpWeights(
            w_hidden=buffers.get("w_hidden", weights.w_hidden),
            w_predict=buffers.get("w_predict", weights.w_predict),
            w_readout=buffers.get("w_readout", weights.w_readout),
        )

    def buf(name, size):
        arr = buffers.get(name) if buffers is not None else None
        if arr is None:
            arr = np.empty(size)
        arr[:] = 0.5
        return arr

    state = UnitState(
        weights=weights,
        tau=tau,
        prev_signal=buf("prev_signal", signal_size),
        integral=buf("integral", signal_size),
        prev_prediction=buf("prev_prediction", signal_size),
        published_hidden=buf("published_hidden", hidden_size),
        published_readout=buf("published_readout", readout_size),
    )
    state.act = mlp.alloc_activations(weights)
    return state


def compute_features(state: UnitState, signal: np.ndarray):
    """Derivative, fresh integral, and error features for this signal.

    Pure: reads the buffers, writes nothing. Each output is elementwise in
    [0, 1] whenever signal and buffers are.
    """
    if signal.shape != state.prev_signal.shape:
        raise ContractError(
            f"signal length {signal.shape} does not match unit signal size "
            f"{state.prev_signal.shape}")
    derivative = 0.5 + (signal - state.prev_signal) * 0.5
    integral = state.tau * state.integral + (1.0 - state.tau) * signal
    error = 0.5 + (state.prev_prediction - signal) * 0.5
    return derivative, integral, error


def assemble_input(signal, derivative, integral, error, context) -> np.ndarray:
    """Concatenate the five blocks in fixed order."""
    return np.concatenate([signal, derivative, integral, error, context])


def unit_predict(state: UnitState, inp: UnitInput) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Predict the next signal; publish hidden and readout.

    Returns (prediction, readout, hidden) views into the unit's activation
    buffers. The input signal itself is kept in the activation stash, so
    unit_train needs no extra copy of it.
    """
    if state.pending:
        raise ProtocolError("unit_predict called twice without unit_train")
    if inp.context.shape[0] != state.context_size:
        raise ContractError(
            f"context length {inp.context.shape[0]} does not match unit "
            f"context size {state.context_size}")
    derivative, integral, error = compute_features(state, inp.signal)
    n = state.signal_size
    x = state.act.input
    x[0:n] = inp.signal
    x[n:2 * n] = derivative
    x[2 * n:3 * n] = integral
    x[3 * n:4 * n] = error
    x[4 * n:-1] = inp.context
    mlp.forward(state.weights, x[:-1], out=state.act)
    np.copyto(state.published_hidden, state.act.hidden[:-1])
    np.copyto(state.published_readout, state.act.readout_out)
    state.pending = True
    return state.act.predict_out, state.act.readout_out, state.act.hidden[:-1]


def unit_train(state: UnitState, actual_next_signal: np.ndarray,
               readout_target: np.ndarray | None,
               lr: LearningRates, joint_mode: bool,
               readout_mix: float = 1.0) -> tuple[float, float | None]:
    """Score the pending prediction, take one SGD step, commit buffers.

    actual_next_signal is the signal that arrived after the prediction;
    readout_target None means unsupervised (readout head untouched, no
    readout error). Both learning rates 0 advances buffers while leaving
    every weight bit-identical, which is how evaluation mode runs.

    Returns (predict_mse, readout_mse or None), each a mean over vector
    components.
    """
    if not state.pending:
        raise ProtocolError("unit_train called without a pending unit_predict")
    if actual_next_signal.shape != state.prev_signal.shape:
        raise ContractError("actual_next_signal length mismatch")
    act = state.act
    p_error = float(np.mean((act.predict_out - actual_next_signal) ** 2))
    r_error = None
    if readout_target is not None:
        r_error = float(np.mean((act.readout_out - readout_target) ** 2))
    # Skip gradient math when no matrix can change; evaluation runs this way.
    if lr.predict != 0.0 or (readout_target is not None and lr.readout != 0.0):
        mlp.backward_sgd(state.weights, act, actual_next_signal, readout_target,
                         lr, joint_mode, readout_mix)
    elif not np.all(np.isfinite(actual_next_signal)):
        raise ContractError("actual_next_signal contains non-finite values")
    # Commit: the signal this prediction was computed from becomes
    # prev_signal, the integral advances over it, and the prediction just
    # scored becomes the residual reference for the next step.
    n = state.signal_size
    consumed = act.input[0:n]
    state.integral *= state.tau
    state.integral += (1.0 - state.tau) * consumed
    np.copyto(state.prev_signal, consumed)
    np.copyto(state.prev_prediction, act.predict_out)
    state.pending = False
    return p_error, r_error
