"""Independent reference implementations used to check the package.

Everything here is deliberately written the slow, obvious way (explicit
loops, flood fill, exhaustive sorting) and shares no code with the package
internals it checks.
"""

from __future__ import annotations

from collections import deque

import numpy as np

from pvm.mlp import LearningRates, MlpWeights, backward_sgd, forward


def copy_weights(w: MlpWeights) -> MlpWeights:
    return MlpWeights(w.w_hidden.copy(), w.w_predict.copy(), w.w_readout.copy())


def analytic_gradients(w, x, target_p, target_r, joint, mix):
    """Extract the gradients backward_sgd applies, via unit learning rates.

    One SGD step with lr 1 turns the update rule w' = w - lr * g into
    g = w - w', so the returned matrices are exactly what the code uses.
    """
    trial = copy_weights(w)
    act = forward(trial, x)
    backward_sgd(trial, act, target_p, target_r,
                 LearningRates(predict=1.0, readout=1.0), joint, mix)
    return (w.w_hidden - trial.w_hidden,
            w.w_predict - trial.w_predict,
            w.w_readout - trial.w_readout)


def fd_gradients(w, x, target_p, target_r, joint, mix, h=1e-5):
    """Central finite differences of the per-matrix loss functions.

    The predict head trains on Lp = 1/2 sum (predict - tp)^2, the readout
    head on Lr = 1/2 sum (readout - tr)^2, and the hidden matrix on
    Lp + mix * Lr when joint mode propagates the readout gradient.
    """
    def loss_p(weights):
        a = forward(weights, x)
        return 0.5 * float(np.sum((a.predict_out - target_p) ** 2))

    def loss_r(weights):
        if target_r is None:
            return 0.0
        a = forward(weights, x)
        return 0.5 * float(np.sum((a.readout_out - target_r) ** 2))

    def hidden_loss(weights):
        total = loss_p(weights)
        if joint and target_r is not None and mix != 0.0:
            total += mix * loss_r(weights)
        return total

    def grad_of(matrix_name, loss):
        base = copy_weights(w)
        mat = getattr(base, matrix_name)
        g = np.zeros_like(mat)
        for i in range(mat.shape[0]):
            for j in range(mat.shape[1]):
                orig = mat[i, j]
                mat[i, j] = orig + h
                up = loss(base)
                mat[i, j] = orig - h
                down = loss(base)
                mat[i, j] = orig
                g[i, j] = (up - down) / (2.0 * h)
        return g

    return (grad_of("w_hidden", hidden_loss),
            grad_of("w_predict", loss_p),
            grad_of("w_readout", loss_r))


def max_relative_error(analytic: np.ndarray, fd: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(fd)), 1e-8)
    return float(np.max(np.abs(analytic - fd) / denom))


def relative_norm_error(analytic: np.ndarray, fd: np.ndarray) -> float:
    """Frobenius-norm relative error between two gradient matrices.

    The norm ratio is the right scale for a central-difference check: the
    truncation noise on near-zero entries stays in the numerator where the
    overall gradient magnitude can absorb it, instead of being divided by
    its own tiny value as in an elementwise comparison.
    """
    denom = max(float(np.linalg.norm(analytic)), float(np.linalg.norm(fd)), 1e-8)
    return float(np.linalg.norm(analytic - fd)) / denom


def brute_force_box(values: np.ndarray, threshold: float,
                    frame_size: tuple[int, int]):
    """Reference box extraction: exhaustive sort, BFS flood fill.

    Returns None for absent, else (x, y, w, h) in frame coordinates.
    """
    hgt, wid = values.shape
    flat = values.ravel()
    peak_flat = 0
    for i in range(1, flat.size):
        if flat[i] > flat[peak_flat]:
            peak_flat = i
    peak_val = flat[peak_flat]
    med = sorted(flat.tolist())[(flat.size - 1) // 2]
    if not peak_val > med + threshold:
        return None
    cutoff = (peak_val - med) * 0.5 + med
    start = (peak_flat // wid, peak_flat % wid)
    seen = {start}
    queue = deque([start])
    cells = []
    while queue:
        r, c = queue.popleft()
        cells.append((r, c))
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                rr, cc = r + dr, c + dc
                if (rr, cc) in seen or not (0 <= rr < hgt and 0 <= cc < wid):
                    continue
                if values[rr, cc] > cutoff:
                    seen.add((rr, cc))
                    queue.append((rr, cc))
    rows = [r for r, _ in cells]
    cols = [c for _, c in cells]
    sx = frame_size[0] / wid
    sy = frame_size[1] / hgt
    return (min(cols) * sx, min(rows) * sy,
            (max(cols) - min(cols) + 1) * sx, (max(rows) - min(rows) + 1) * sy)


def random_heatmaps(n: int, size: int = 16, seed: int = 0):
    """A seeded mixture of heatmap shapes: noise, blobs, spikes, plateaus."""
    rng = np.random.default_rng(seed)
    maps = []
    for i in range(n):
        kind = i % 5
        if kind == 0:
            vals = rng.uniform(0, 255, (size, size))
        elif kind == 1:
            vals = rng.normal(20, 5, (size, size)).clip(0, 255)
            for _ in range(rng.integers(1, 3)):
                cy, cx = rng.uniform(0, size, 2)
                amp = rng.uniform(30, 230)
                sig = rng.uniform(0.5, 3.0)
                yy, xx = np.mgrid[0:size, 0:size]
                vals += amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sig ** 2))
            vals = vals.clip(0, 255)
        elif kind == 2:
            vals = np.full((size, size), float(rng.uniform(0, 100)))
            for _ in range(rng.integers(1, 6)):
                vals[rng.integers(0, size), rng.integers(0, size)] = rng.uniform(100, 255)
        elif kind == 3:
            vals = rng.uniform(0, 30, (size, size))
            y0, x0 = rng.integers(0, size - 3, 2)
            vals[y0:y0 + 3, x0:x0 + 3] = rng.uniform(150, 255)
        else:
            vals = np.round(rng.uniform(0, 255, (size, size)))
        maps.append(vals)
    return maps
