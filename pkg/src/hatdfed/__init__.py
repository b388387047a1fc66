"""Energy-aware decentralized federated learning with bandit-driven topology selection."""
from .config import ConfigError, LinkId, SimConfig, load_config, resolve_config, validate_config
from .simulation import RunSummary, run_simulation

__version__ = "0.1.0"

__all__ = ["ConfigError", "LinkId", "RunSummary", "SimConfig", "load_config", "resolve_config",
           "run_simulation", "validate_config"]
