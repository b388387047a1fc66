"""Synthetic dataset, Dirichlet non-IID partitioning and device connectivity."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np

log = logging.getLogger(__name__)

GAMMA_FLOOR = 1e-300


class SizingError(ValueError):
    """The dataset cannot supply the requested partition."""


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray  # (n, d)
    labels: np.ndarray  # (n,) int
    n_classes: int

    def __post_init__(self) -> None:
        if len(self.labels) == 0:
            raise ValueError("dataset must be non-empty")
        if self.features.ndim != 2 or self.features.shape[0] != len(self.labels):
            raise ValueError("features must be (n, d) aligned with labels")
        if self.labels.min() < 0 or self.labels.max() >= self.n_classes:
            raise ValueError("labels out of range")

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, indices: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
        idx = np.asarray(indices, dtype=np.int64)
        return self.features[idx], self.labels[idx]


@dataclass(frozen=True)
class Partition:
    per_server_indices: List[np.ndarray]
    per_server_ratios: List[np.ndarray]


def gen_synthetic_dataset(n_classes: int, dim: int, n_per_class: int, rng: np.random.Generator,
                          class_sep: float = 1.5, spread: float = 1.0) -> Dataset:
    """Gaussian blobs, one per class, sharing an isotropic spread.

    Class means are drawn once from ``N(0, class_sep^2 I)``; the sample order is
    class-major so partitions can index by class directly.
    """
    if min(n_classes, dim, n_per_class) < 1:
        raise ValueError("all counts must be at least 1")
    means = rng.normal(0.0, class_sep, size=(n_classes, dim))
    features = np.repeat(means, n_per_class, axis=0)
    features = features + rng.normal(0.0, spread, size=features.shape)
    labels = np.repeat(np.arange(n_classes), n_per_class)
    return Dataset(features=features, labels=labels, n_classes=n_classes)


def dirichlet_ratios(lambda_dir: float, n_classes: int, rng: np.random.Generator) -> np.ndarray:
    """One draw of ``Dir(lambda_dir)`` by normalizing independent Gamma variates."""
    g = np.maximum(rng.gamma(lambda_dir, 1.0, size=n_classes), GAMMA_FLOOR)
    return g / g.sum()


def largest_remainder(ratios: np.ndarray, total: int) -> np.ndarray:
    """Integer counts summing to ``total`` that track ``ratios * total``."""
    raw = np.asarray(ratios, dtype=float) * total
    counts = np.floor(raw).astype(np.int64)
    short = total - int(counts.sum())
    if short > 0:
        # stable sort: equal remainders go to the lower class index
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def dirichlet_partition(ds: Dataset, lambda_dir: float, n_servers: int, per_server_size: int,
                        rng: np.random.Generator) -> Partition:
    """Give each server ``per_server_size`` disjoint samples with Dirichlet label skew.

    When a class runs out, the shortfall is taken from the nearest class index
    (cyclically) that still has samples.
    """
    needed = n_servers * per_server_size
    if needed > len(ds):
        raise SizingError(f"need {needed} samples for {n_servers} servers, dataset has {len(ds)} "
                          f"(deficit {needed - len(ds)})")
    L = ds.n_classes
    pools = [list(rng.permutation(np.flatnonzero(ds.labels == c))) for c in range(L)]
    indices, ratios = [], []
    for server in range(n_servers):
        r = dirichlet_ratios(lambda_dir, L, rng)
        counts = largest_remainder(r, per_server_size)
        chosen: List[int] = []
        for c in range(L):
            want = int(counts[c])
            take = min(want, len(pools[c]))
            chosen.extend(pools[c][:take])
            del pools[c][:take]
            deficit = want - take
            step = 1
            while deficit > 0:
                for donor in ((c + step) % L, (c - step) % L):
                    if deficit and pools[donor]:
                        extra = min(deficit, len(pools[donor]))
                        chosen.extend(pools[donor][:extra])
                        del pools[donor][:extra]
                        deficit -= extra
                        log.info("server %d: class %d short, filled %d from class %d",
                                 server, c, extra, donor)
                step += 1
                if step > L:
                    # unreachable given the total-size check above
                    raise SizingError(f"server {server}: cannot fill class {c}")
        indices.append(np.asarray(chosen, dtype=np.int64))
        ratios.append(r)
    return Partition(per_server_indices=indices, per_server_ratios=ratios)


def managed_devices(n_servers: int, devices_per_server: int) -> List[np.ndarray]:
    """Server -> device index map with devices numbered contiguously per server."""
    return [np.arange(i * devices_per_server, (i + 1) * devices_per_server) for i in range(n_servers)]


def sample_device_connectivity(rho: float, managed: Sequence[np.ndarray], rng: np.random.Generator) -> np.ndarray:
    """Device-to-server matrix ``A^d`` (N x M) with independent ``Bern(rho)`` managed entries."""
    if not 0 <= rho <= 1:
        raise ValueError(f"rho must be a probability, got {rho}")
    n_devices = sum(len(m) for m in managed)
    conn = np.zeros((len(managed), n_devices), dtype=np.int8)
    for server, devices in enumerate(managed):
        conn[server, devices] = rng.random(len(devices)) < rho
    return conn


def draw_round_pool(partition_indices: np.ndarray, pool_size: int, rng: np.random.Generator) -> np.ndarray:
    """This round's pool: ``pool_size`` samples without replacement from the server partition."""
    return rng.choice(partition_indices, size=pool_size, replace=False)


def split_subsets(pool: np.ndarray, n_subsets: int, rng: np.random.Generator) -> List[np.ndarray]:
    """Shuffle the round pool and cut it into ``n_subsets`` near-equal subsets."""
    return np.array_split(rng.permutation(pool), n_subsets)


def build_round_dataset(server: int, conn: np.ndarray, subsets: Sequence[np.ndarray],
                        rng: np.random.Generator) -> Tuple[np.ndarray, int]:
    """One subset per connected device of ``server``, chosen without replacement."""
    connected = int(conn[server].sum())
    if connected > len(subsets):
        log.warning("server %d: %d connected devices exceed %d subsets, clamping",
                    server, connected, len(subsets))
        connected = len(subsets)
    if connected == 0:
        return np.empty(0, dtype=np.int64), 0
    picks = rng.choice(len(subsets), size=connected, replace=False)
    idx = np.concatenate([subsets[p] for p in sorted(picks)]).astype(np.int64)
    return idx, len(idx)


def save_dataset(ds: Dataset, path: str | Path) -> None:
    """Flat text table: one sample per line, label first, then features."""
    with open(path, "w") as fh:
        fh.write(f"# n_classes {ds.n_classes}\n")
        for label, row in zip(ds.labels, ds.features):
            fh.write(" ".join([str(int(label))] + [repr(float(v)) for v in row]) + "\n")


def load_dataset(path: str | Path) -> Dataset:
    n_classes = None
    labels, rows = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                parts = line[1:].split()
                if len(parts) == 2 and parts[0] == "n_classes":
                    n_classes = int(parts[1])
                continue
            fields = line.split()
            try:
                labels.append(int(fields[0]))
                rows.append([float(v) for v in fields[1:]])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
    labels_arr = np.asarray(labels, dtype=np.int64)
    if n_classes is None:
        n_classes = int(labels_arr.max()) + 1
    return Dataset(features=np.asarray(rows, dtype=float), labels=labels_arr, n_classes=n_classes)
