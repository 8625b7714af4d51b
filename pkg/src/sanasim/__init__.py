"""Immune-inspired collaborative network protection, simulated tick by tick."""

from .runner import compare, run, seed_sweep
from .scenario import InvalidScenario, Scenario, load_scenario, validate_scenario
from .simulation import Simulation

__all__ = [
    "InvalidScenario",
    "Scenario",
    "Simulation",
    "compare",
    "load_scenario",
    "run",
    "seed_sweep",
    "validate_scenario",
]
