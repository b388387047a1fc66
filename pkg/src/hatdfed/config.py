"""Experiment configuration, shared domain types and unit-cost derivation.

Units are fixed throughout the package: energies in joules, payloads in bits,
energy efficiency (EE) in Kbit/J.
"""
from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, List, NamedTuple, Optional, Tuple

import numpy as np

log = logging.getLogger(__name__)

SEED_ENV_VAR = "HATDFED_SEED"


class ConfigError(ValueError):
    """Raised for invalid or unreadable configuration."""


class LinkId(NamedTuple):
    """Directed inter-server link: ``src`` transmits its model to ``dst``.

    In a topology matrix the link occupies entry ``[dst, src]`` (row = receiver).
    """

    src: int
    dst: int


@dataclass(frozen=True)
class SimConfig:
    # edge system
    n_servers: int = 5
    devices_per_server: int = 30
    n_rounds: int = 200
    # trade-offs and bandit tuning
    alpha: float = 0.6
    beta: float = 0.4
    eta: float = 0.0179  # sqrt(K ln N) / (N K) at K=200, N=5
    gamma: float = 0.3
    # data heterogeneity
    rho: float = 0.5
    lambda_dir: float = 0.3
    # payloads and energy efficiency
    n_tr: int = 2
    sample_bits: int = 6272
    model_bits: int = 47_200_000
    ee_device: float = 1.0
    ee_link_range: Tuple[float, float] = (20.0, 50.0)
    tau_choices: Tuple[float, ...] = (4.0, 16.0)
    batch_sample_size: int = 10
    seed: int = 0
    # desk-scale task and learner
    n_classes: int = 10
    feature_dim: int = 20
    samples_per_class: int = 1000
    test_per_class: int = 100
    class_sep: float = 0.6
    per_server_samples: int = 800
    hidden: int = 0
    lr: float = 0.1
    local_epochs: int = 5
    local_batch: int = 10
    # RND link budget; None means the same budget as gamma
    rnd_gamma: Optional[float] = None

    def __post_init__(self) -> None:
        # JSON gives lists; keep the frozen instance hashable and canonical
        object.__setattr__(self, "ee_link_range", tuple(float(v) for v in self.ee_link_range))
        object.__setattr__(self, "tau_choices", tuple(float(v) for v in self.tau_choices))

    @property
    def n_links(self) -> int:
        return self.n_servers * (self.n_servers - 1)

    @property
    def link_budget(self) -> int:
        return link_budget(self.gamma, self.n_servers)

    @property
    def round_pool_size(self) -> int:
        """Samples drawn from a server's partition each round (60 by default)."""
        return self.n_tr * self.devices_per_server

    @property
    def psi(self) -> float:
        return derive_device_cost(self.n_tr, self.sample_bits, self.ee_device)

    def replace(self, **changes: Any) -> "SimConfig":
        data = asdict(self)
        data.update(changes)
        return SimConfig(**data)


def link_budget(gamma: float, n_servers: int) -> int:
    """Links per round, ``round(gamma * N(N-1))`` with halves rounded up."""
    return int(np.floor(gamma * n_servers * (n_servers - 1) + 0.5))


def derive_link_cost(ee_link: float, model_bits: float) -> float:
    """Energy (J) to push one model over a link with efficiency ``ee_link`` Kbit/J."""
    if not ee_link > 0:
        raise ConfigError(f"link energy efficiency must be positive, got {ee_link}")
    return (model_bits / 1000.0) / ee_link


def derive_device_cost(n_tr: int, sample_bits: float, ee_device: float) -> float:
    """Energy (J) for one device to upload ``n_tr`` samples in a round."""
    if not ee_device > 0:
        raise ConfigError(f"device energy efficiency must be positive, got {ee_device}")
    return (n_tr * sample_bits / 1000.0) / ee_device


def validate_config(cfg: SimConfig) -> List[str]:
    """Return every violated invariant of ``cfg``; an empty list means valid."""
    problems = []

    def check(ok: bool, message: str) -> None:
        if not ok:
            problems.append(message)

    check(0 <= cfg.alpha <= 1, "alpha out of [0,1]")
    check(0 <= cfg.beta <= 1, "beta out of [0,1]")
    check(0 < cfg.eta <= 1, "eta out of (0,1]")
    check(0 < cfg.gamma <= 1, "gamma out of (0,1]")
    check(0 <= cfg.rho <= 1, "rho out of [0,1]")
    check(cfg.lambda_dir > 0, "lambda_dir must be positive")
    check(cfg.n_servers >= 2, "n_servers must be at least 2")
    check(cfg.devices_per_server >= 1, "devices_per_server must be at least 1")
    check(cfg.n_rounds >= 1, "n_rounds must be at least 1")
    if 0 < cfg.gamma <= 1 and cfg.n_servers >= 2:
        check(cfg.link_budget >= 1, "round(gamma*N(N-1)) must be at least 1")
    if cfg.rnd_gamma is not None:
        check(0 < cfg.rnd_gamma <= 1, "rnd_gamma out of (0,1]")
    check(cfg.n_tr > 0, "n_tr must be positive")
    check(cfg.sample_bits > 0, "sample_bits must be positive")
    check(cfg.model_bits > 0, "model_bits must be positive")
    check(cfg.ee_device > 0, "ee_device must be positive")
    lo, hi = (cfg.ee_link_range + (0.0, 0.0))[:2]
    check(len(cfg.ee_link_range) == 2 and 0 < lo <= hi, "ee_link_range must be [lo, hi] with 0 < lo <= hi")
    check(len(cfg.tau_choices) >= 1 and all(t > 0 for t in cfg.tau_choices),
          "tau_choices must be a non-empty list of positive values")
    check(cfg.batch_sample_size >= 1, "batch_sample_size must be at least 1")
    check(cfg.n_classes >= 1 and cfg.feature_dim >= 1, "n_classes and feature_dim must be at least 1")
    check(cfg.samples_per_class >= 1 and cfg.test_per_class >= 1, "sample counts must be at least 1")
    check(cfg.per_server_samples >= cfg.round_pool_size,
          "per_server_samples must cover one round pool (n_tr * devices_per_server)")
    check(cfg.n_servers * cfg.per_server_samples <= cfg.n_classes * cfg.samples_per_class,
          "dataset too small for n_servers * per_server_samples")
    check(cfg.hidden >= 0, "hidden must be non-negative")
    check(cfg.lr > 0, "lr must be positive")
    check(cfg.local_epochs >= 1 and cfg.local_batch >= 1, "local_epochs and local_batch must be at least 1")
    check(cfg.seed >= 0, "seed must be non-negative")
    return problems


# ---------------------------------------------------------------- file I/O

_FIELD_NAMES = [f.name for f in fields(SimConfig)]


def config_to_text(cfg: SimConfig) -> str:
    """Canonical JSON form; ``config_from_text`` inverts it byte for byte."""
    data = asdict(cfg)
    data["ee_link_range"] = list(cfg.ee_link_range)
    data["tau_choices"] = list(cfg.tau_choices)
    return json.dumps(data, indent=2) + "\n"


def config_from_text(text: str, source: str = "<string>") -> SimConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be an object")
    unknown = [k for k in data if k not in _FIELD_NAMES]
    if unknown:
        lines = text.splitlines()
        where = []
        for key in unknown:
            lineno = next((n for n, line in enumerate(lines, 1) if f'"{key}"' in line), 0)
            where.append(f"{source}:{lineno}: unknown key '{key}'")
        raise ConfigError("\n".join(where))
    try:
        cfg = SimConfig(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    return cfg


def load_config(path: str | os.PathLike, env: Optional[dict] = None) -> SimConfig:
    """Read a config file; ``HATDFED_SEED`` in the environment overrides ``seed``."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    cfg = config_from_text(text, source=str(path))
    env = os.environ if env is None else env
    if SEED_ENV_VAR in env:
        try:
            cfg = cfg.replace(seed=int(env[SEED_ENV_VAR]))
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer") from exc
    return cfg


def save_config(cfg: SimConfig, path: str | os.PathLike) -> None:
    Path(path).write_text(config_to_text(cfg))


PRESETS = {
    "table1-desk": SimConfig(),
    "table1-desk-l03-r09": SimConfig(rho=0.9),
    "table1-desk-l07-r05": SimConfig(lambda_dir=0.7),
    "table1-desk-l07-r09": SimConfig(lambda_dir=0.7, rho=0.9),
    # RND at a 0.4 link proportion instead of the shared gamma budget
    "table1-desk-rnd04": SimConfig(rnd_gamma=0.4),
    "smoke": SimConfig(n_rounds=5, samples_per_class=200, per_server_samples=120, test_per_class=20),
}


def resolve_config(source: str) -> SimConfig:
    """Accept a preset name or a config file path."""
    if source in PRESETS:
        cfg = PRESETS[source]
        if SEED_ENV_VAR in os.environ:
            cfg = cfg.replace(seed=int(os.environ[SEED_ENV_VAR]))
        return cfg
    return load_config(source)


@dataclass
class CostModel:
    """Per-server and per-link unit costs drawn once at setup."""

    psi: float
    tau: np.ndarray  # J/sample per server
    ee_link: np.ndarray  # N x N, [dst, src]
    sigma: np.ndarray  # N x N joules, [dst, src]; zero diagonal

    @classmethod
    def draw(cls, cfg: SimConfig, rng: np.random.Generator) -> "CostModel":
        n = cfg.n_servers
        tau = rng.choice(np.asarray(cfg.tau_choices), size=n)
        lo, hi = cfg.ee_link_range
        ee = rng.uniform(lo, hi, size=(n, n))
        np.fill_diagonal(ee, np.inf)
        sigma = (cfg.model_bits / 1000.0) / ee
        np.fill_diagonal(sigma, 0.0)
        log.debug("drawn tau per server: %s", tau.tolist())
        return cls(psi=cfg.psi, tau=tau, ee_link=ee, sigma=sigma)
