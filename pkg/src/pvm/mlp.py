"""Three-head sigmoid MLP trained by plain online SGD.

Each unit owns one of these: a shared hidden layer feeding two output heads,
one predicting the next input signal and one producing the tracker readout.
Weight matrices carry the bias as a trailing column, and activation vectors
carry a matching trailing 1.0, so a forward pass is just a matrix-vector
product per layer. All math is float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import ConfigError, ContractError


@dataclass
class LearningRates:
    predict: float
    readout: float


@dataclass
class MlpWeights:
    """Weight matrices, each with a trailing bias column.

    w_hidden  : (hidden, input + 1)
    w_predict : (predict, hidden + 1)
    w_readout : (readout, hidden + 1)
    """

    w_hidden: np.ndarray
    w_predict: np.ndarray
    w_readout: np.ndarray

    @property
    def input_size(self) -> int:
        return self.w_hidden.shape[1] - 1

    @property
    def hidden_size(self) -> int:
        return self.w_hidden.shape[0]

    @property
    def predict_size(self) -> int:
        return self.w_predict.shape[0]

    @property
    def readout_size(self) -> int:
        return self.w_readout.shape[0]


@dataclass
class MlpActivations:
    """One forward pass worth of intermediate values.

    `input` and `hidden` include the trailing bias element (always 1.0) so
    they can be fed straight into the weight matrices during backward.
    """

    input: np.ndarray
    hidden: np.ndarray
    predict_out: np.ndarray
    readout_out: np.ndarray


def sigmoid(x):
    """Logistic function, saturation-safe at extreme arguments."""
    return expit(x)


def init_mlp(input_size: int, hidden_size: int, predict_size: int,
             readout_size: int, seed: int) -> MlpWeights:
    """Fresh weights, uniform in +-1/sqrt(fan_in) per matrix.

    fan_in counts the bias column. Draw order is hidden, predict, readout,
    so a given seed always yields the same weights.
    """
    for name, size in (("input", input_size), ("hidden", hidden_size),
                       ("predict", predict_size), ("readout", readout_size)):
        if size < 1:
            raise ConfigError(f"{name} size must be >= 1, got {size}")
    if hidden_size >= input_size:
        raise ConfigError(
            f"hidden size {hidden_size} must be smaller than input size {input_size}")
    rng = np.random.default_rng(seed)

    def draw(rows, cols):
        r = 1.0 / np.sqrt(cols)
        return rng.uniform(-r, r, size=(rows, cols))

    return MlpWeights(
        w_hidden=draw(hidden_size, input_size + 1),
        w_predict=draw(predict_size, hidden_size + 1),
        w_readout=draw(readout_size, hidden_size + 1),
    )


def alloc_activations(w: MlpWeights) -> MlpActivations:
    """Preallocated activation buffers with the bias slots set to 1.0."""
    inp = np.empty(w.input_size + 1)
    inp[-1] = 1.0
    hid = np.empty(w.hidden_size + 1)
    hid[-1] = 1.0
    return MlpActivations(
        input=inp,
        hidden=hid,
        predict_out=np.empty(w.predict_size),
        readout_out=np.empty(w.readout_size),
    )


def forward(w: MlpWeights, input_vec: np.ndarray,
            out: MlpActivations | None = None) -> MlpActivations:
    """Run the net on one input vector (without bias element).

    Deterministic and side-effect free on the weights. When `out` is given
    its buffers are reused, which the executor relies on in the hot loop.
    """
    if input_vec.shape != (w.input_size,):
        raise ContractError(
            f"input length {input_vec.shape} does not match net input size {w.input_size}")
    act = out if out is not None else alloc_activations(w)
    act.input[:-1] = input_vec
    act.hidden[:-1] = sigmoid(w.w_hidden @ act.input)
    np.copyto(act.predict_out, sigmoid(w.w_predict @ act.hidden))
    np.copyto(act.readout_out, sigmoid(w.w_readout @ act.hidden))
    return act


def backward_sgd(w: MlpWeights, act: MlpActivations,
                 target_predict: np.ndarray,
                 target_readout: np.ndarray | None,
                 lr: LearningRates, joint_mode: bool,
                 readout_mix: float = 1.0) -> MlpWeights:
    """One in-place SGD step against squared error on both heads.

    Head deltas use the sigmoid derivative out*(1-out). The hidden layer
    always receives the predict-head gradient; in joint mode it additionally
    receives readout_mix times the readout-head gradient. lr.predict scales
    the hidden and predict matrices, lr.readout the readout matrix, and a
    rate of exactly 0 leaves the corresponding matrices bit-identical.
    target_readout None skips the readout head entirely.

    Gradients are evaluated at the pre-update weights; mutates `w` and
    returns it.
    """
    if target_predict.shape != act.predict_out.shape:
        raise ContractError("predict target length mismatch")
    if not np.all(np.isfinite(target_predict)):
        raise ContractError("predict target contains non-finite values")

    d_predict = (act.predict_out - target_predict) * act.predict_out * (1.0 - act.predict_out)
    hidden_grad = w.w_predict[:, :-1].T @ d_predict

    d_readout = None
    if target_readout is not None:
        if target_readout.shape != act.readout_out.shape:
            raise ContractError("readout target length mismatch")
        if not np.all(np.isfinite(target_readout)):
            raise ContractError("readout target contains non-finite values")
        d_readout = (act.readout_out - target_readout) * act.readout_out * (1.0 - act.readout_out)
        if joint_mode and readout_mix != 0.0:
            hidden_grad += readout_mix * (w.w_readout[:, :-1].T @ d_readout)

    if lr.predict != 0.0:
        h = act.hidden[:-1]
        d_hidden = hidden_grad * h * (1.0 - h)
        w.w_predict -= lr.predict * np.outer(d_predict, act.hidden)
        w.w_hidden -= lr.predict * np.outer(d_hidden, act.input)
    if d_readout is not None and lr.readout != 0.0:
        w.w_readout -= lr.readout * np.outer(d_readout, act.hidden)
    return w
