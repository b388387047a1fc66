"""Desk-scale classifier with hand-written gradients.

Parameters live in one flat vector so aggregation can treat every model as a
point in R^n. ``hidden == 0`` gives softmax regression; otherwise a single
tanh hidden layer sits in front of the softmax output.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

log = logging.getLogger(__name__)


class DivergenceError(FloatingPointError):
    pass


@dataclass(frozen=True)
class ModelParams:
    values: np.ndarray
    shape: Tuple[int, int, int]  # (d, hidden, n_classes)

    def __post_init__(self) -> None:
        if len(self.values) != param_count(*self.shape):
            raise ValueError(f"expected {param_count(*self.shape)} values for shape {self.shape}, "
                             f"got {len(self.values)}")

    def with_values(self, values: np.ndarray) -> "ModelParams":
        return ModelParams(values=values, shape=self.shape)


@dataclass(frozen=True)
class TrainReport:
    steps: int
    mean_loss: float
    params_out: ModelParams


def param_count(d: int, hidden: int, n_classes: int) -> int:
    if hidden == 0:
        return d * n_classes + n_classes
    return d * hidden + hidden + hidden * n_classes + n_classes


def _unpack(params: ModelParams):
    d, h, L = params.shape
    v = params.values
    if h == 0:
        return v[: d * L].reshape(d, L), v[d * L:]
    o = 0
    w1 = v[o:o + d * h].reshape(d, h); o += d * h
    b1 = v[o:o + h]; o += h
    w2 = v[o:o + h * L].reshape(h, L); o += h * L
    return w1, b1, w2, v[o:]


def init_params(d: int, hidden: int, n_classes: int, rng: np.random.Generator) -> ModelParams:
    """Xavier-uniform weights, zero biases."""
    def xavier(fan_in, fan_out):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-a, a, size=(fan_in, fan_out)).ravel()

    if hidden == 0:
        parts = [xavier(d, n_classes), np.zeros(n_classes)]
    else:
        parts = [xavier(d, hidden), np.zeros(hidden), xavier(hidden, n_classes), np.zeros(n_classes)]
    return ModelParams(values=np.concatenate(parts), shape=(d, hidden, n_classes))


def logits(params: ModelParams, x: np.ndarray) -> np.ndarray:
    if params.shape[1] == 0:
        w, b = _unpack(params)
        return x @ w + b
    w1, b1, w2, b2 = _unpack(params)
    return np.tanh(x @ w1 + b1) @ w2 + b2


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def per_sample_losses(params: ModelParams, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Cross-entropy of each sample; forward pass only."""
    if len(y) < 1:
        raise ValueError("probe must hold at least one sample")
    losses = -_log_softmax(logits(params, x))[np.arange(len(y)), y]
    if not np.all(np.isfinite(losses)):
        raise DivergenceError("non-finite loss in forward pass")
    return losses


def loss_and_grad(params: ModelParams, x: np.ndarray, y: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient w.r.t. the flat parameters.

    An empty batch has zero loss and zero gradient.
    """
    n = len(y)
    if n == 0:
        return 0.0, np.zeros_like(params.values)
    d, h, L = params.shape
    if h == 0:
        w, b = _unpack(params)
        z = x @ w + b
    else:
        w1, b1, w2, b2 = _unpack(params)
        a = np.tanh(x @ w1 + b1)
        z = a @ w2 + b2
    logp = _log_softmax(z)
    loss = -logp[np.arange(n), y].mean()
    dz = np.exp(logp)
    dz[np.arange(n), y] -= 1.0
    dz /= n
    if h == 0:
        grad = np.concatenate([(x.T @ dz).ravel(), dz.sum(axis=0)])
    else:
        da = (dz @ w2.T) * (1.0 - a * a)
        grad = np.concatenate([(x.T @ da).ravel(), da.sum(axis=0), (a.T @ dz).ravel(), dz.sum(axis=0)])
    return float(loss), grad


def local_train(params: ModelParams, x: np.ndarray, y: np.ndarray, lr: float, epochs: int, batch: int,
                rng: np.random.Generator) -> TrainReport:
    """Mini-batch SGD on cross-entropy.

    On a non-finite loss or gradient the round's training is abandoned and the
    input parameters are returned unchanged.
    """
    if not lr > 0:
        raise ValueError(f"lr must be positive, got {lr}")
    n = len(y)
    if n == 0:
        return TrainReport(steps=0, mean_loss=0.0, params_out=params)
    v = params.values.copy()
    steps, total = 0, 0.0
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            loss, grad = loss_and_grad(params.with_values(v), x[idx], y[idx])
            if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
                log.warning("training diverged after %d steps; keeping input parameters", steps)
                return TrainReport(steps=0, mean_loss=0.0, params_out=params)
            v -= lr * grad
            steps += 1
            total += loss
    return TrainReport(steps=steps, mean_loss=total / steps, params_out=params.with_values(v))


def predict(params: ModelParams, x: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. ties go to the lowest class index
    return np.argmax(logits(params, x), axis=1)


def evaluate_accuracy(params: ModelParams, x: np.ndarray, y: np.ndarray) -> float:
    if len(y) == 0:
        raise ValueError("cannot evaluate accuracy on an empty test set")
    return float(np.mean(predict(params, x) == y))


def gradient_check(params: ModelParams, x: np.ndarray, y: np.ndarray, epsilon: float = 1e-5,
                   n_coords: int = 50, rng: Optional[np.random.Generator] = None) -> float:
    """Largest relative error between analytic and central-difference gradients.

    Relative error is ``|a - n| / max(|a| + |n|, 1e-8)`` so near-zero
    coordinates do not blow up the ratio.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    rng = rng or np.random.default_rng(0)
    _, analytic = loss_and_grad(params, x, y)
    size = len(params.values)
    coords = rng.choice(size, size=min(n_coords, size), replace=False)
    worst = 0.0
    for c in coords:
        plus = params.values.copy(); plus[c] += epsilon
        minus = params.values.copy(); minus[c] -= epsilon
        numeric = (loss_and_grad(params.with_values(plus), x, y)[0]
                   - loss_and_grad(params.with_values(minus), x, y)[0]) / (2 * epsilon)
        denom = max(abs(analytic[c]) + abs(numeric), 1e-8)
        worst = max(worst, abs(analytic[c] - numeric) / denom)
    return worst


def save_params(params: ModelParams, path) -> None:
    d, h, L = params.shape
    with open(path, "w") as fh:
        fh.write(f"# shape {d} {h} {L}\n")
        fh.writelines(f"{float(v)!r}\n" for v in params.values)


def load_params(path) -> ModelParams:
    with open(path) as fh:
        header = fh.readline().split()
        if header[:2] != ["#", "shape"] or len(header) != 5:
            raise ValueError(f"{path}:1: expected '# shape d hidden n_classes'")
        shape = tuple(int(v) for v in header[2:])
        values = np.array([float(line) for line in fh if line.strip()])
    return ModelParams(values=values, shape=shape)
