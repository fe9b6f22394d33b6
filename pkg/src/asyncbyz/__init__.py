"""Byzantine-robust asynchronous mu^2-SGD simulator with weighted robust aggregators."""

from .aggregation import AggregatorSpec, WeightedVectorSet, aggregate, certificate
from .attacks import AttackSpec
from .engine import SimulationConfig, TraceRow, run, sweep
from .optimizer import OptimizerConfig
from .problems import ProblemSpec
from .scheduler import ScheduleSpec

__version__ = "0.1.0"

__all__ = [
    "AggregatorSpec",
    "AttackSpec",
    "OptimizerConfig",
    "ProblemSpec",
    "ScheduleSpec",
    "SimulationConfig",
    "TraceRow",
    "WeightedVectorSet",
    "aggregate",
    "certificate",
    "run",
    "sweep",
]
