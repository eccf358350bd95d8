"""Scenario loading, closed-loop simulation and run outputs."""

from .scenario import (
    Scenario,
    ScenarioError,
    ScenarioParseError,
    ScenarioValidationError,
    load_scenario,
    parse_scenario,
    shipped_scenarios,
)
from .sim import COLUMNS, RunResult, SimLog, VelocityController, run
from .outputs import emit_outputs, read_csv, replay

__all__ = [
    "COLUMNS",
    "RunResult",
    "Scenario",
    "ScenarioError",
    "ScenarioParseError",
    "ScenarioValidationError",
    "SimLog",
    "VelocityController",
    "emit_outputs",
    "load_scenario",
    "parse_scenario",
    "read_csv",
    "replay",
    "run",
    "shipped_scenarios",
]
