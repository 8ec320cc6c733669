"""Simulation and verification of event-triggered multi-agent consensus."""

from .graph import Graph, build_graph, generate, laplacian, spectral_summary
from .scenario import Scenario, ScenarioError, load_scenario, scenario_from_dict, validate
from .engine import Trace, metrics, reference_trajectory, run

__all__ = [
    "Graph", "Scenario", "ScenarioError", "Trace", "build_graph", "generate", "laplacian",
    "load_scenario", "metrics", "reference_trajectory", "run", "scenario_from_dict",
    "spectral_summary", "validate",
]
__version__ = "0.1.0"
