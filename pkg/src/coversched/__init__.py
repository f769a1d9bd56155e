"""Single-agent coverage-tour scheduling.

A map of square areas is toured by one agent that picks, per area, a
visit position, an entry corner, and a coverage pattern. The package
provides the learned policy (graph encoder + attention decoder trained
with REINFORCE), exact and heuristic reference solvers, map generation,
and an evaluation harness.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .errors import CoverschedError
from .geometry import (
    Area,
    Decision,
    Pattern,
    PatternKind,
    Schedule,
    build_schedule,
    default_patterns,
    schedule_cost,
    validate_schedule,
)
from .mapgen import AreaMap, generate_map, generate_maps, load_maps, save_maps
from .policy import PolicyConfig, PolicyParams, parameter_breakdown
from .decoder import rollout
from .solvers import (
    brute_force_enumerate,
    build_edge_matrix,
    exact_schedule,
    held_karp_tsp,
    nearest_neighbor,
    symmetrize,
    two_opt,
)
from .training import TrainConfig, train
from .harness import EvalReport, boxplot_stats, evaluate, optimality_gap
from .checkpoint import load_policy, save_policy

__all__ = [
    "__version__",
    "CoverschedError",
    "Area",
    "AreaMap",
    "Decision",
    "Pattern",
    "PatternKind",
    "Schedule",
    "build_schedule",
    "default_patterns",
    "schedule_cost",
    "validate_schedule",
    "generate_map",
    "generate_maps",
    "load_maps",
    "save_maps",
    "PolicyConfig",
    "PolicyParams",
    "parameter_breakdown",
    "rollout",
    "exact_schedule",
    "brute_force_enumerate",
    "nearest_neighbor",
    "two_opt",
    "build_edge_matrix",
    "symmetrize",
    "held_karp_tsp",
    "TrainConfig",
    "train",
    "evaluate",
    "EvalReport",
    "boxplot_stats",
    "optimality_gap",
    "load_policy",
    "save_policy",
]
