"""Brute-force and Monte Carlo references for checking the link selector."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .bandit import BanditState, bandit_step

MAX_BRUTEFORCE_ITEMS = 25
GENERATORS = ("fixed-gap", "drifting", "adversarial-swap")


def knapsack_bruteforce(values: Sequence[float], capacity: int,
                        weights: Optional[Sequence[float]] = None) -> Tuple[Tuple[int, ...], float]:
    """Exact 0/1 knapsack by enumerating every subset.

    Unit weights (the default) turn the capacity into a cardinality limit.
    Returns the best index subset (sorted) and its total value; ties keep the
    first subset found in enumeration order.
    """
    n = len(values)
    if n > MAX_BRUTEFORCE_ITEMS:
        raise ValueError(f"{n} items exceeds the brute-force bound of {MAX_BRUTEFORCE_ITEMS}")
    weights = [1.0] * n if weights is None else list(weights)
    best: Tuple[int, ...] = ()
    best_total = 0.0
    for mask in range(1 << n):
        total_w = 0.0
        total_v = 0.0
        for i in range(n):
            if mask >> i & 1:
                total_w += weights[i]
                total_v += values[i]
        if total_w <= capacity and total_v > best_total:
            best_total = total_v
            best = tuple(i for i in range(n) if mask >> i & 1)
    return best, best_total


def top_m(values: Sequence[float], m: int) -> Tuple[Tuple[int, ...], float]:
    v = np.asarray(values, dtype=float)
    idx = np.argsort(-v, kind="stable")[:m]
    return tuple(sorted(int(i) for i in idx)), float(v[idx].sum())


@dataclass(frozen=True)
class SyntheticBanditEnv:
    utilities: np.ndarray  # K x n_links, entries in [0, 1]
    generator: str = "table"

    def __post_init__(self) -> None:
        u = self.utilities
        if u.ndim != 2 or u.size == 0:
            raise ValueError("utility table must be a non-empty K x n matrix")
        if np.any(~np.isfinite(u)) or u.min() < 0 or u.max() > 1:
            raise ValueError("utilities must lie in [0, 1]")

    @property
    def n_rounds(self) -> int:
        return self.utilities.shape[0]

    @property
    def n_links(self) -> int:
        return self.utilities.shape[1]


def make_env(generator: str, n_rounds: int, n_links: int, m: int, rng: np.random.Generator,
             hi: float = 0.7, lo: float = 0.3, noise: float = 0.1) -> SyntheticBanditEnv:
    """Synthetic utility tables.

    fixed-gap: a random m-subset sits at ``hi``, the rest at ``lo``, plus
    uniform noise of half-width ``noise``.
    drifting: the fixed-gap levels with a slow per-link sinusoid (amplitude
    0.15, two periods over the run) replacing the noise.
    adversarial-swap: two disjoint m-subsets take turns being the good set,
    switching every quarter of the run.
    """
    if generator not in GENERATORS:
        raise ValueError(f"unknown generator {generator!r}; choose from {', '.join(GENERATORS)}")
    if m > n_links:
        raise ValueError(f"link budget {m} exceeds {n_links} links")
    perm = rng.permutation(n_links)
    best = perm[:m]
    base = np.full(n_links, lo)
    base[best] = hi
    k = np.arange(n_rounds)[:, None]
    if generator == "fixed-gap":
        u = base + rng.uniform(-noise, noise, size=(n_rounds, n_links))
    elif generator == "drifting":
        phase = rng.uniform(0, 2 * np.pi, size=n_links)
        u = base + 0.15 * np.sin(4 * np.pi * k / n_rounds + phase)
    else:
        if 2 * m > n_links:
            raise ValueError("adversarial-swap needs two disjoint m-subsets")
        other = perm[m:2 * m]
        u = np.full((n_rounds, n_links), lo)
        block = (4 * k[:, 0]) // n_rounds
        u[np.ix_(block % 2 == 0, best)] = hi
        u[np.ix_(block % 2 == 1, other)] = hi
    return SyntheticBanditEnv(np.clip(u, 0.0, 1.0), generator)


def hindsight_optimal(env: SyntheticBanditEnv, m: int) -> float:
    """Sum over rounds of the m largest utilities (per-round optimal topology)."""
    if m > env.n_links:
        raise ValueError("m exceeds the number of links")
    return float(per_round_optimal(env, m).sum())


def per_round_optimal(env: SyntheticBanditEnv, m: int) -> np.ndarray:
    if m == 0:
        return np.zeros(env.n_rounds)
    return -np.sort(-env.utilities, axis=1)[:, :m].sum(axis=1)


def servers_for_links(n_links: int) -> float:
    """N with N(N-1) = n_links (not necessarily an integer for arbitrary tables)."""
    return (1 + math.sqrt(1 + 4 * n_links)) / 2


def regret_bound(n_servers: float, n_rounds: int) -> float:
    """``3 N sqrt(K ln N)``."""
    return 3 * n_servers * math.sqrt(n_rounds * math.log(n_servers))


def tuned_eta(n_servers: float, n_rounds: int) -> float:
    """``sqrt(K ln N) / (N K)``, the step size the regret bound assumes."""
    return math.sqrt(n_rounds * math.log(n_servers)) / (n_servers * n_rounds)


@dataclass
class RegretRun:
    selections: list  # per round: selected link indices
    gained: np.ndarray  # per round utility collected
    optimal: np.ndarray  # per round top-m utility
    bound: float
    eta: float

    @property
    def regret(self) -> float:
        return float(self.optimal.sum() - self.gained.sum())

    @property
    def per_round_regret(self) -> np.ndarray:
        return self.optimal - self.gained

    def split_regret(self) -> Tuple[float, float]:
        """Regret over the first and second half of the rounds."""
        r = self.per_round_regret
        h = len(r) // 2
        return float(r[:h].sum()), float(r[h:].sum())


def empirical_regret(env: SyntheticBanditEnv, m: int, eta: Optional[float] = None,
                     rng: Optional[np.random.Generator] = None) -> RegretRun:
    """Run the full selector against ``env`` with bandit feedback.

    Only the selected links' utilities are revealed to the selector each
    round. ``eta`` defaults to the tuned step size for this table's N and K.
    """
    rng = rng or np.random.default_rng(0)
    n_servers = servers_for_links(env.n_links)
    if eta is None:
        eta = tuned_eta(n_servers, env.n_rounds)
    state = BanditState.for_arms(env.n_links)
    observed = None
    selections, gained = [], np.zeros(env.n_rounds)
    for k in range(env.n_rounds):
        chosen, state = bandit_step(state, eta, m, rng, observed)
        row = env.utilities[k]
        gained[k] = row[chosen].sum()
        observed = np.full(env.n_links, np.nan)
        observed[chosen] = row[chosen]
        selections.append(chosen.tolist())
    return RegretRun(selections=selections, gained=gained, optimal=per_round_optimal(env, m),
                     bound=regret_bound(n_servers, env.n_rounds), eta=eta)


def load_utility_table(path) -> SyntheticBanditEnv:
    """Flat text table: one round per line, one utility per column (commas or spaces)."""
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            cells = line.replace(",", " ").split()
            row = []
            for col, cell in enumerate(cells, 1):
                try:
                    v = float(cell)
                except ValueError:
                    raise ValueError(f"{path}: row {lineno}, col {col}: not a number: {cell!r}") from None
                if not 0 <= v <= 1:
                    raise ValueError(f"{path}: row {lineno}, col {col}: utility {v} outside [0, 1]")
                row.append(v)
            if rows and len(row) != len(rows[0]):
                raise ValueError(f"{path}: row {lineno}: expected {len(rows[0])} columns, got {len(row)}")
            rows.append(row)
    if not rows:
        raise ValueError(f"{path}: empty utility table")
    return SyntheticBanditEnv(np.asarray(rows, dtype=float), "table")


def save_utility_table(env: SyntheticBanditEnv, path) -> None:
    np.savetxt(path, env.utilities, delimiter=",", fmt="%.17g")
