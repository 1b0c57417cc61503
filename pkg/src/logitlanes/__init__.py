"""Multilane multiclass traffic on a ring road with Logit lane choice.

The lane split of each class follows a stochastic user equilibrium; the
resulting implicit fluxes drive Lax-Friedrichs, Rusanov, Euler-Lagrange
remap and Lagrangian vehicle-group integrators.
"""

from .equilibrium import (
    BatchSplit,
    ConvergenceError,
    EquilibriumSplit,
    SolverSettings,
    assignment_objective,
    class_flux,
    logit_shares,
    max_wave_speed,
    solve_batch,
    solve_split,
)
from .model import (
    FundamentalDiagram,
    GridState,
    NetworkSpec,
    Segment,
    ValidationError,
    grid_from_segments,
    project_to_grid,
)
from .scenario import Scenario, ScenarioError, load_network, load_scenario, riemann_scenario

__all__ = [
    "BatchSplit",
    "ConvergenceError",
    "EquilibriumSplit",
    "FundamentalDiagram",
    "GridState",
    "NetworkSpec",
    "Scenario",
    "ScenarioError",
    "Segment",
    "SolverSettings",
    "ValidationError",
    "assignment_objective",
    "class_flux",
    "grid_from_segments",
    "load_network",
    "load_scenario",
    "logit_shares",
    "max_wave_speed",
    "project_to_grid",
    "riemann_scenario",
    "solve_batch",
    "solve_split",
]
