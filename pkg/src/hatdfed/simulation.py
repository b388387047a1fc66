"""End-to-end simulation: coordinator topology phase, then server-side updates.

Randomness comes from one root seed fanned out into named streams, and
per-server work in a round draws from its own ``(round, server)`` stream, so
running servers in a thread pool yields the same result as running them in
sequence.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import data as data_env
from .aggregation import InboundModel, dcmu_round, draw_probe, uniform_average
from .bandit import BanditState, UtilityInputs, all_links, construct_topology, topology_from_links
from .config import ConfigError, CostModel, LinkId, SimConfig, link_budget, validate_config
from .energy import EnergyLedger, computation_cost, data_transmission_cost, model_transmission_cost
from .learner import ModelParams, evaluate_accuracy, init_params, local_train

log = logging.getLogger(__name__)

STRATEGIES = ("hat_dfed", "rnd", "ring")
_STREAMS = {"setup": 0, "data": 1, "connectivity": 2, "bandit": 3, "learner": 4, "baseline": 5}


class SimulationError(RuntimeError):
    pass


def stream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Independent generator for a named component (and optional sub-keys)."""
    return np.random.default_rng([seed, _STREAMS[name], *extra])


@dataclass
class RoundMetrics:
    k: int
    accuracy: np.ndarray
    train_size: np.ndarray
    connected: np.ndarray
    topology: np.ndarray
    e_dt: np.ndarray
    e_cp: np.ndarray
    e_mt: float
    round_total: float
    utilities: Dict[LinkId, float] = field(default_factory=dict)
    agg_debug: List[Tuple[int, int, float, float]] = field(default_factory=list)


@dataclass
class RunSummary:
    strategy: str
    avg_acc: float
    var_acc: float
    best_acc: float
    worst_acc: float
    tot_cost_mj: float
    mt_cost_mj: float
    series: List[RoundMetrics] = field(default_factory=list)
    ledger: Optional[EnergyLedger] = None
    audit: List[Tuple[int, int, int]] = field(default_factory=list)  # (round, receiver, sender)
    tau: Optional[np.ndarray] = None

    def as_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "avg_acc": self.avg_acc,
            "var_acc": self.var_acc,
            "best_acc": self.best_acc,
            "worst_acc": self.worst_acc,
            "tot_cost_MJ": self.tot_cost_mj,
            "mt_cost_MJ": self.mt_cost_mj,
            "rounds": len(self.series),
            "tau_per_server": None if self.tau is None else self.tau.tolist(),
        }


def ring_topology(n_servers: int) -> np.ndarray:
    """Static directed cycle s_0 -> s_1 -> ... -> s_{N-1} -> s_0."""
    return topology_from_links((LinkId(i, (i + 1) % n_servers) for i in range(n_servers)), n_servers)


def baseline_topology(strategy: str, k: int, cfg: SimConfig, rng: np.random.Generator) -> np.ndarray:
    """Topology for the comparison strategies; ``k`` is unused by both but kept for the call shape."""
    if strategy == "ring":
        return ring_topology(cfg.n_servers)
    if strategy == "rnd":
        gamma = cfg.gamma if cfg.rnd_gamma is None else cfg.rnd_gamma
        m = link_budget(gamma, cfg.n_servers)
        links = all_links(cfg.n_servers)
        chosen = rng.choice(len(links), size=m, replace=False)
        return topology_from_links((links[i] for i in sorted(chosen)), cfg.n_servers)
    raise ConfigError(f"unsupported strategy {strategy!r}; supported: rnd, ring")


def collect_summary(series: Sequence[RoundMetrics], strategy: str = "") -> RunSummary:
    """Final-round accuracy statistics across servers and cumulative costs in MJ."""
    if not series:
        raise SimulationError("cannot summarize an empty run")
    acc = series[-1].accuracy
    tot = sum(m.round_total for m in series)
    mt = sum(m.e_mt for m in series)
    return RunSummary(strategy=strategy, avg_acc=float(np.mean(acc)), var_acc=float(np.var(acc)),
                      best_acc=float(np.max(acc)), worst_acc=float(np.min(acc)),
                      tot_cost_mj=tot / 1e6, mt_cost_mj=mt / 1e6, series=list(series))


def build_task(cfg: SimConfig) -> Tuple[data_env.Dataset, data_env.Dataset]:
    """Training pool and the shared balanced test set, drawn from the same clusters."""
    rng = stream(cfg.seed, "data")
    per_class = cfg.samples_per_class + cfg.test_per_class
    full = data_env.gen_synthetic_dataset(cfg.n_classes, cfg.feature_dim, per_class, rng, class_sep=cfg.class_sep)
    within = np.arange(len(full)) % per_class
    train_idx = np.flatnonzero(within < cfg.samples_per_class)
    test_idx = np.flatnonzero(within >= cfg.samples_per_class)
    mk = lambda idx: data_env.Dataset(features=full.features[idx], labels=full.labels[idx], n_classes=cfg.n_classes)
    return mk(train_idx), mk(test_idx)


class Simulation:
    """One experiment; ``run`` executes all rounds for the chosen strategy."""

    def __init__(self, cfg: SimConfig, strategy: str = "hat_dfed", workers: int = 1):
        problems = validate_config(cfg)
        if problems:
            raise ConfigError("; ".join(problems))
        if strategy not in STRATEGIES:
            raise ConfigError(f"unsupported strategy {strategy!r}; supported: {', '.join(STRATEGIES)}")
        self.cfg = cfg
        self.strategy = strategy
        self.workers = workers
        self.costs = CostModel.draw(cfg, stream(cfg.seed, "setup"))
        self.train, self.test = build_task(cfg)
        self.partition = data_env.dirichlet_partition(self.train, cfg.lambda_dir, cfg.n_servers,
                                                      cfg.per_server_samples, stream(cfg.seed, "data", 1))
        self.managed = data_env.managed_devices(cfg.n_servers, cfg.devices_per_server)
        init = init_params(cfg.feature_dim, cfg.hidden, cfg.n_classes, stream(cfg.seed, "learner"))
        self.models: List[ModelParams] = [init] * cfg.n_servers
        self.accuracy = np.array([self._evaluate(m) for m in self.models])
        self.ledger = EnergyLedger(cfg.n_servers)
        self.bandit = BanditState.initial(cfg.n_servers)
        self.feedback: Optional[UtilityInputs] = None
        self.audit: List[Tuple[int, int, int]] = []
        self._conn_rng = stream(cfg.seed, "connectivity")
        self._data_rng = stream(cfg.seed, "data", 2)
        self._bandit_rng = stream(cfg.seed, "bandit")
        self._baseline_rng = stream(cfg.seed, "baseline")

    def _evaluate(self, params: ModelParams) -> float:
        return evaluate_accuracy(params, self.test.features, self.test.labels)

    def _map(self, fn: Callable[[int], object]) -> list:
        servers = range(self.cfg.n_servers)
        if self.workers > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                return list(pool.map(fn, servers))
        return [fn(i) for i in servers]

    def _topology(self, k: int) -> Tuple[np.ndarray, Dict[LinkId, float]]:
        cfg = self.cfg
        if self.strategy == "hat_dfed":
            topo, self.bandit, utilities = construct_topology(self.bandit, self.feedback, cfg.alpha, cfg.eta,
                                                              cfg.link_budget, self._bandit_rng)
            return topo, utilities
        return baseline_topology(self.strategy, k, cfg, self._baseline_rng), {}

    def step(self, k: int) -> RoundMetrics:
        cfg = self.cfg
        n = cfg.n_servers
        # data collection over this round's device connectivity
        conn = data_env.sample_device_connectivity(cfg.rho, self.managed, self._conn_rng)
        round_idx = []
        for i in range(n):
            pool = data_env.draw_round_pool(self.partition.per_server_indices[i], cfg.round_pool_size, self._data_rng)
            subsets = data_env.split_subsets(pool, cfg.devices_per_server, self._data_rng)
            idx, _ = data_env.build_round_dataset(i, conn, subsets, self._data_rng)
            round_idx.append(idx)
        sizes = np.array([len(idx) for idx in round_idx])
        e_dt = np.array([data_transmission_cost(i, conn, self.costs.psi) for i in range(n)])
        e_cp = np.array([computation_cost(int(sizes[i]), float(self.costs.tau[i])) for i in range(n)])
        for i in range(n):
            self.ledger.record_server(k, i, e_dt[i], e_cp[i])

        # phase I: coordinator picks the topology
        topology, utilities = self._topology(k)

        # phase II: local training, exchange, aggregation, evaluation
        def train(i: int):
            rng = stream(cfg.seed, "learner", k, i)
            x, y = self.train.subset(round_idx[i])
            report = local_train(self.models[i], x, y, cfg.lr, cfg.local_epochs, cfg.local_batch, rng)
            probe = draw_probe(round_idx[i], cfg.batch_sample_size, rng)
            return report.params_out, probe

        trained = self._map(train)
        local = [t[0] for t in trained]

        def aggregate(i: int):
            senders = [int(j) for j in np.flatnonzero(topology[i])]
            own = InboundModel(i, local[i], int(sizes[i]))
            inbound = [InboundModel(j, local[j], int(sizes[j])) for j in senders]
            if self.strategy == "hat_dfed":
                px, py = self.train.subset(trained[i][1])
                merged, debug = dcmu_round(own, inbound, px, py, cfg.beta)
            else:
                merged, debug = uniform_average(own, inbound), {}
            return merged, senders, debug

        merged = self._map(aggregate)
        agg_debug = []
        for i, (params, senders, debug) in enumerate(merged):
            self.audit.extend((k, i, j) for j in senders)
            agg_debug.extend((i, j, l, q) for j, (l, q) in sorted(debug.items()))
        self.models = [m[0] for m in merged]
        prev_acc = self.accuracy
        self.accuracy = np.array(self._map(lambda i: self._evaluate(self.models[i])))

        # energy for the links actually used this round
        for dst, src in zip(*np.nonzero(topology)):
            link = LinkId(int(src), int(dst))
            self.ledger.record_link(k, link, model_transmission_cost(link, self.costs.sigma))
        total = self.ledger.round_total(k, topology)
        self.feedback = UtilityInputs(acc_now=self.accuracy, acc_prev=prev_acc, e_dt=e_dt, e_cp=e_cp,
                                      sigma=self.costs.sigma)
        return RoundMetrics(k=k, accuracy=self.accuracy, train_size=sizes, connected=conn.sum(axis=1),
                            topology=topology, e_dt=e_dt, e_cp=e_cp, e_mt=self.ledger.round_mt[k],
                            round_total=total, utilities=utilities, agg_debug=agg_debug)

    def run(self) -> RunSummary:
        series = []
        for k in range(1, self.cfg.n_rounds + 1):
            try:
                series.append(self.step(k))
            except Exception as exc:
                raise SimulationError(f"round {k} ({self.strategy}): {exc}") from exc
        summary = collect_summary(series, self.strategy)
        summary.ledger = self.ledger
        summary.audit = self.audit
        summary.tau = self.costs.tau
        return summary


def run_simulation(cfg: SimConfig, strategy: str = "hat_dfed", workers: int = 1) -> RunSummary:
    return Simulation(cfg, strategy, workers).run()
