"""Simulator for a proof-of-work chain whose blocks attest to data availability
(or, in rate mode, to an observed exchange-rate interval)."""
from .config import ConfigError, ScenarioConfig, config_from_dict, load_config
from .actors import InvariantViolation
from .metrics import RunMetrics
from .scenario import Scenario, run_scenario, sweep

__all__ = [
    "ConfigError", "InvariantViolation", "RunMetrics", "Scenario", "ScenarioConfig",
    "config_from_dict", "load_config", "run_scenario", "sweep",
]
__version__ = "0.1.0"
