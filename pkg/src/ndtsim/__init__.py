"""Distributed network-digital-twin traffic prediction under fake-twin poisoning."""

from .aggregation import Aggregator, AggregatorConfig
from .attacks import AttackConfig, Attacker
from .estimators import EstimatorConfig
from .model import PredictorConfig, WindowSpec
from .orchestrator import ExperimentResult, ScenarioConfig, Simulation, run_experiment

__all__ = [
    "Aggregator", "AggregatorConfig", "AttackConfig", "Attacker", "EstimatorConfig",
    "PredictorConfig", "WindowSpec", "ExperimentResult", "ScenarioConfig", "Simulation",
    "run_experiment",
]
__version__ = "0.1.0"
