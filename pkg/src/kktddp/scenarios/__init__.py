"""Scenario builders, the IK baseline, diagnostics and config files."""
from .astronaut import build_astronaut
from .config import (
    ConfigError,
    Issue,
    load_scenario,
    read_config,
    scenario_from_config,
    scenario_to_config,
    shipped_configs,
    validate_config,
    write_config,
)
from .diagnostics import DiagnosticsReport, diagnostics
from .ik import IkResult, ik_baseline, ik_control
from .problem import ContactPhase, Scenario, ScenarioError, ScenarioProblem, total_cost
from .stride import ReachabilityError, build_stride, gait_plan, static_forces

__all__ = [
    "ConfigError",
    "ContactPhase",
    "DiagnosticsReport",
    "IkResult",
    "Issue",
    "ReachabilityError",
    "Scenario",
    "ScenarioError",
    "ScenarioProblem",
    "build_astronaut",
    "build_stride",
    "diagnostics",
    "gait_plan",
    "ik_baseline",
    "ik_control",
    "load_scenario",
    "read_config",
    "scenario_from_config",
    "scenario_to_config",
    "shipped_configs",
    "static_forces",
    "total_cost",
    "validate_config",
    "write_config",
]
