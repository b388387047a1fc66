"""Importance-aware model aggregation on the receiving server."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

from .bandit import softmax
from .learner import ModelParams, per_sample_losses

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class InboundModel:
    sender: int
    params: ModelParams
    train_size: int


def importance_from_losses(losses: np.ndarray) -> float:
    """``B * sqrt(mean(loss^2))`` over a probe of ``B`` samples."""
    losses = np.asarray(losses, dtype=float)
    b = len(losses)
    if b < 1:
        raise ValueError("probe must hold at least one sample")
    if not np.all(np.isfinite(losses)):
        raise FloatingPointError("non-finite probe loss")
    return float(b * np.sqrt(np.mean(losses ** 2)))


def approximate_importance(probe_x: np.ndarray, probe_y: np.ndarray, model: ModelParams) -> float:
    """Importance of ``model`` judged on the receiver's probe set (forward passes only)."""
    return importance_from_losses(per_sample_losses(model, probe_x, probe_y))


def assign_aggregation_weights(importances: Mapping[int, float], sizes: Mapping[int, int],
                               beta: float) -> Dict[int, float]:
    """``beta * softmax(l) + (1 - beta) * softmax(size / max size)`` per sender.

    Sizes are divided by the largest size before the softmax so raw sample
    counts never sit in an exponent.
    """
    if set(importances) != set(sizes):
        raise ValueError(f"importance keys {sorted(importances)} != size keys {sorted(sizes)}")
    if not 0 <= beta <= 1:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    keys = sorted(importances)
    l = np.array([importances[k] for k in keys], dtype=float)
    s = np.array([sizes[k] for k in keys], dtype=float)
    top = s.max()
    s_norm = s / top if top > 0 else s
    q = beta * softmax(l) + (1.0 - beta) * softmax(s_norm)
    return dict(zip(keys, q.tolist()))


def aggregate_models(models: Mapping[int, ModelParams], q: Mapping[int, float]) -> ModelParams:
    """Convex combination ``sum_j q_j * m_j``."""
    if set(models) != set(q):
        raise ValueError("models and weights must share senders")
    total = sum(q.values())
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"aggregation weights sum to {total}, not 1")
    keys = sorted(models)
    shape = models[keys[0]].shape
    if any(models[k].shape != shape for k in keys):
        raise ValueError("cannot aggregate models of different shapes")
    stacked = np.stack([models[k].values for k in keys])
    weights = np.array([q[k] for k in keys])
    out = weights @ stacked
    # rounding can push a coordinate a hair outside the inputs' range
    out = np.clip(out, stacked.min(axis=0), stacked.max(axis=0))
    return ModelParams(values=out, shape=shape)


def draw_probe(train_indices: np.ndarray, b: int, rng: np.random.Generator) -> np.ndarray:
    """Up to ``b`` indices sampled without replacement from the round dataset."""
    if len(train_indices) <= b:
        if 0 < len(train_indices) < b:
            log.debug("probe uses all %d available samples (B=%d)", len(train_indices), b)
        return np.asarray(train_indices)
    return rng.choice(train_indices, size=b, replace=False)


def dcmu_round(own: InboundModel, inbound: List[InboundModel], probe_x: Optional[np.ndarray],
               probe_y: Optional[np.ndarray], beta: float) -> Tuple[ModelParams, Dict[int, Tuple[float, float]]]:
    """Aggregate the receiver's own model with its in-neighbors' models.

    Returns the new parameters and ``{sender: (importance, weight)}`` for the
    debug log. With no in-neighbors, or an empty probe set, the receiver keeps
    its own model.
    """
    if not inbound:
        return own.params, {own.sender: (float("nan"), 1.0)}
    if probe_y is None or len(probe_y) == 0:
        log.debug("server %d has no probe data; self-only aggregation", own.sender)
        return own.params, {own.sender: (float("nan"), 1.0)}
    participants = [own] + list(inbound)
    importances = {m.sender: approximate_importance(probe_x, probe_y, m.params) for m in participants}
    sizes = {m.sender: m.train_size for m in participants}
    q = assign_aggregation_weights(importances, sizes, beta)
    merged = aggregate_models({m.sender: m.params for m in participants}, q)
    return merged, {k: (importances[k], q[k]) for k in q}


def uniform_average(own: InboundModel, inbound: List[InboundModel]) -> ModelParams:
    """Plain average over self and in-neighbors (the baselines' aggregation rule)."""
    participants = [own] + list(inbound)
    q = {m.sender: 1.0 / len(participants) for m in participants}
    return aggregate_models({m.sender: m.params for m in participants}, q)
