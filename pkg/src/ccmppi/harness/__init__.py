"""Scenario orchestration: config files, closed-loop simulation, grid search,
and result emission."""

from .config import ConfigError, ScenarioConfig
from .grid import compute_aggregates, run_grid_search
from .results import emit_results
from .scenario import LapRecord, RunMetrics, run_scenario

__all__ = [
    "ConfigError",
    "ScenarioConfig",
    "LapRecord",
    "RunMetrics",
    "run_scenario",
    "run_grid_search",
    "compute_aggregates",
    "emit_results",
]
