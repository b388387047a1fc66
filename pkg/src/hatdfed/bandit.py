"""Utility-driven link selection as a combinatorial semi-bandit.

Each round the coordinator turns last round's observed link utilities into
importance-weighted estimates, updates exponential weights, assigns capped
selection probabilities that sum to the link budget ``m``, and draws exactly
``m`` links with dependent rounding. Links are kept in a fixed order (see
``all_links``) and every per-link quantity is an array aligned with it.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .config import LinkId

log = logging.getLogger(__name__)

# selected links with p below this are floored before dividing in the estimator
P_MIN = 1e-3
_TINY = np.finfo(float).tiny


class BanditError(RuntimeError):
    pass


def all_links(n_servers: int) -> List[LinkId]:
    """Every directed link, ordered by receiver then sender."""
    return [LinkId(src, dst) for dst in range(n_servers) for src in range(n_servers) if src != dst]


def softmax(x: np.ndarray) -> np.ndarray:
    z = np.asarray(x, dtype=float)
    e = np.exp(z - z.max())
    return e / e.sum()


def topology_from_links(links: Iterable[LinkId], n_servers: int) -> np.ndarray:
    """Adjacency matrix with ``A[dst, src] = 1`` for every link."""
    a = np.zeros((n_servers, n_servers), dtype=np.int8)
    for link in links:
        if link.src == link.dst:
            raise BanditError(f"self-link {link}")
        a[link.dst, link.src] = 1
    return a


def links_from_topology(topology: np.ndarray) -> List[LinkId]:
    return [LinkId(int(src), int(dst)) for dst, src in zip(*np.nonzero(topology))]


@dataclass(frozen=True)
class UtilityInputs:
    """Round feedback the servers upload to the coordinator."""

    acc_now: np.ndarray  # P_k per server
    acc_prev: np.ndarray  # P_{k-1} per server
    e_dt: np.ndarray  # per server, J
    e_cp: np.ndarray  # per server, J
    sigma: np.ndarray  # N x N model transfer cost, [dst, src]


def compute_utilities(inputs: UtilityInputs, selected: Sequence[LinkId], alpha: float) -> Dict[LinkId, float]:
    """Utility of each selected link, a convex mix of performance gain and cheapness.

    Both factors are softmax-normalized over the selected links only. The cost
    of link (src -> dst) counts the sender's device and compute energy plus the
    transfer itself; the performance factor is the receiver's accuracy change.
    """
    if not selected:
        return {}
    cost = np.array([inputs.e_dt[l.src] + inputs.e_cp[l.src] + inputs.sigma[l.dst, l.src] for l in selected])
    gain = np.array([inputs.acc_now[l.dst] - inputs.acc_prev[l.dst] for l in selected])
    for link, c, g in zip(selected, cost, gain):
        if not (np.isfinite(c) and np.isfinite(g)):
            raise BanditError(f"non-finite utility input on link {link}")
    s_cost = 1.0 - softmax(cost)
    s_perf = softmax(gain)
    u = np.clip(alpha * s_perf + (1.0 - alpha) * s_cost, 0.0, 1.0)
    return {link: float(v) for link, v in zip(selected, u)}


@dataclass(frozen=True)
class BanditState:
    links: Tuple[LinkId, ...]
    weights: np.ndarray
    probs: np.ndarray  # probabilities used for the last selection
    last_selected: np.ndarray  # bool mask of the last topology
    last_utilities: np.ndarray  # observed utility per link, nan where unobserved
    k: int = 0

    @classmethod
    def initial(cls, n_servers: int) -> "BanditState":
        """Round-0 state: unit weights, ``p_0 = 1``, empty topology.

        Unit weights replace an all-zero start, which multiplicative updates
        could never leave; with an empty first topology every estimate is 1,
        so round 1 is a uniform draw either way.
        """
        links = tuple(all_links(n_servers))
        n = len(links)
        return cls(links=links, weights=np.ones(n), probs=np.ones(n), last_selected=np.zeros(n, dtype=bool),
                   last_utilities=np.full(n, np.nan), k=0)

    @classmethod
    def for_arms(cls, n_arms: int) -> "BanditState":
        """Standalone selector over ``n_arms`` arms labelled 0..n-1."""
        return cls(links=tuple(range(n_arms)), weights=np.ones(n_arms), probs=np.ones(n_arms),
                   last_selected=np.zeros(n_arms, dtype=bool), last_utilities=np.full(n_arms, np.nan), k=0)

    def index(self, link) -> int:
        return self.links.index(link)


def estimate_utility(link: LinkId, state: BanditState) -> float:
    """Importance-weighted utility estimate ``1 - 1{selected} (1 - u) / p``."""
    i = state.index(link)
    return float(estimate_all(state)[i])


def estimate_all(state: BanditState) -> np.ndarray:
    est = np.ones(len(state.links))
    sel = state.last_selected
    if not sel.any():
        return est
    p = state.probs[sel]
    u = state.last_utilities[sel]
    if np.any(p <= 0):
        bad = [state.links[i] for i in np.flatnonzero(sel)[p <= 0]]
        raise BanditError(f"selected links with zero probability: {bad}")
    if np.any(np.isnan(u)):
        bad = [state.links[i] for i in np.flatnonzero(sel)[np.isnan(u)]]
        raise BanditError(f"selected links without observed utility: {bad}")
    if np.any(p < P_MIN):
        log.debug("flooring %d selection probabilities at %g", int((p < P_MIN).sum()), P_MIN)
    est[sel] = 1.0 - (1.0 - u) / np.maximum(p, P_MIN)
    return est


def update_weights(weights: np.ndarray, estimates: np.ndarray, eta: float, rescale: bool = True) -> np.ndarray:
    """Exponential update ``w * exp(eta * u_hat)``, then divide by the max weight.

    The common rescale leaves the assigned probabilities unchanged and keeps
    weights in (0, 1]; weights are floored at the smallest positive double.
    """
    if not 0 < eta <= 1:
        raise BanditError(f"eta must lie in (0, 1], got {eta}")
    if np.any(~(weights > 0)):
        raise BanditError("weights must be positive")
    w = weights * np.exp(eta * np.asarray(estimates, dtype=float))
    if not rescale:
        return w
    top = w.max()
    if not np.isfinite(top):
        raise BanditError("weight overflow")
    return np.maximum(w / top, _TINY)


def assign_probabilities(weights: np.ndarray, m: int) -> np.ndarray:
    """Capped proportional probabilities with ``sum(p) == m`` and ``p <= 1``.

    ``p = m w / sum(w)`` capped at 1; capped links are fixed at 1 and the
    remaining budget is re-spread over the rest in proportion to their weights
    until nothing new saturates. Weights are first divided by their maximum and
    rounded to single precision, which makes the result exactly invariant to
    rescaling all weights by a common factor.
    """
    w = np.asarray(weights, dtype=float)
    n = len(w)
    if m > n:
        raise BanditError(f"link budget {m} exceeds {n} links")
    if m < 0 or np.any(~(w > 0)) or not np.all(np.isfinite(w)):
        raise BanditError("weights must be positive and finite")
    r = (w / w.max()).astype(np.float32).astype(np.float64)
    p = np.zeros(n)
    free = np.flatnonzero(r > 0)
    budget = float(m)
    while budget > 0 and len(free):
        share = budget * r[free] / r[free].sum()
        sat = share >= 1.0
        if not sat.any():
            p[free] = share
            budget = 0.0
            break
        p[free[sat]] = 1.0
        budget -= int(sat.sum())
        free = free[~sat]
    if budget > 0:
        # links whose relative weight underflowed single precision split what is left
        rest = np.flatnonzero(p == 0)
        p[rest] = budget / len(rest)
    return p


def dependent_rounding(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Round ``probs`` to a 0/1 vector preserving every marginal; returns selected indices.

    Pairs of fractional entries exchange mass until at most one fractional entry
    is left; that one (only possible when ``sum(probs)`` is not integral, or
    through floating-point residue) is rounded at 0.5.
    """
    p = [float(v) for v in probs]
    if any(v < 0 or v > 1 for v in p):
        raise BanditError("probabilities must lie in [0, 1]")
    frac = [i for i, v in enumerate(p) if 0.0 < v < 1.0]
    while frac:
        if len(frac) == 1:
            i = frac[0]
            p[i] = 1.0 if p[i] >= 0.5 else 0.0
            break
        # uniform ordered pair of distinct fractional entries
        a = int(rng.integers(len(frac)))
        b = int(rng.integers(len(frac) - 1))
        if b >= a:
            b += 1
        i, j = frac[a], frac[b]
        pi, pj = p[i], p[j]
        theta = min(1.0 - pi, pj)
        delta = min(pi, 1.0 - pj)
        assert theta > 0 and delta > 0, "picked an entry already at a bound"
        if rng.random() < delta / (theta + delta):
            # move theta from j to i: i hits 1 or j hits 0
            if 1.0 - pi <= pj:
                p[i], p[j] = 1.0, pj - theta
            else:
                p[i], p[j] = pi + theta, 0.0
        else:
            # move delta from i to j: i hits 0 or j hits 1
            if pi <= 1.0 - pj:
                p[i], p[j] = 0.0, pj + delta
            else:
                p[i], p[j] = pi - delta, 1.0
        for idx in (i, j):
            if not 0.0 < p[idx] < 1.0:
                frac.remove(idx)
    return np.array([i for i, v in enumerate(p) if v == 1.0], dtype=np.int64)


def bandit_step(state: BanditState, eta: float, m: int, rng: np.random.Generator,
                observed: Optional[np.ndarray] = None) -> Tuple[np.ndarray, BanditState]:
    """One selection round.

    ``observed`` carries the utilities of the links selected last round (nan
    elsewhere); it is folded into the state before estimating.
    """
    if observed is not None:
        state = replace(state, last_utilities=np.asarray(observed, dtype=float))
    estimates = estimate_all(state)
    weights = update_weights(state.weights, estimates, eta)
    probs = assign_probabilities(weights, m)
    chosen = dependent_rounding(probs, rng)
    mask = np.zeros(len(state.links), dtype=bool)
    mask[chosen] = True
    new_state = BanditState(links=state.links, weights=weights, probs=probs, last_selected=mask,
                            last_utilities=np.full(len(state.links), np.nan), k=state.k + 1)
    return chosen, new_state


def construct_topology(state: BanditState, inputs: Optional[UtilityInputs], alpha: float, eta: float, m: int,
                       rng: np.random.Generator) -> Tuple[np.ndarray, BanditState, Dict[LinkId, float]]:
    """Coordinator's per-round topology decision.

    ``inputs`` is the feedback from the round that used ``state.last_selected``
    (``None`` before the first round). Returns the new adjacency matrix, the
    advanced state and the utilities observed for last round's links.
    """
    prev_links = [state.links[i] for i in np.flatnonzero(state.last_selected)]
    utilities: Dict[LinkId, float] = {}
    observed = None
    if prev_links:
        if inputs is None:
            raise BanditError("previous topology was non-empty but no feedback was supplied")
        utilities = compute_utilities(inputs, prev_links, alpha)
        observed = np.full(len(state.links), np.nan)
        for link, u in utilities.items():
            observed[state.index(link)] = u
    chosen, new_state = bandit_step(state, eta, m, rng, observed)
    n_servers = max(link.dst for link in state.links) + 1
    topology = topology_from_links((state.links[i] for i in chosen), n_servers)
    return topology, new_state, utilities
