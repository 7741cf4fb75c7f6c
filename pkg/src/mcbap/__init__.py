"""Solver toolkit for the multi-port continuous berth allocation problem."""

from .model import (Assignment, CostBreakdown, CostRates, ExternalBerth, Instance, ModelError,
                    Port, PortCall, Ship, Solution, SpeedLevel, Violation, check_feasibility,
                    evaluate, gap, is_feasible)
from .instgen import GeneratorConfig, benchmark_grid, generate, read_instance, read_solution, \
    write_instance, write_solution
from .construct import construct

__all__ = [
    "Assignment", "CostBreakdown", "CostRates", "ExternalBerth", "Instance", "ModelError", "Port",
    "PortCall", "Ship", "Solution", "SpeedLevel", "Violation", "check_feasibility", "evaluate", "gap",
    "is_feasible", "GeneratorConfig", "benchmark_grid", "generate", "read_instance", "read_solution",
    "write_instance", "write_solution", "construct",
]
