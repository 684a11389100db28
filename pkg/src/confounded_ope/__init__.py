"""Sharp bounds on the long-run average value of a policy in a confounded tabular MDP."""

from .bounds import BoundsResult, PgdParams, compute_bounds, naive_estimate, pgd_extremum, sweep_gamma
from .environments import (
    GridworldParams,
    RandomWalkParams,
    build_gridworld,
    build_random_walk,
    gridworld_behavior,
    gridworld_policies,
)
from .mdp import ConfoundedMDP, FullInfoPolicy, ObservedPolicy, policy_value, true_marginal_weights
from .occupancy import EmpiricalOccupancy, Trajectory, estimate_occupancy, population_occupancy, simulate_trajectory
from .oracle import OracleParams, brute_force_bounds
from .sensitivity import SensitivityBounds, bounds_from_gamma, is_in_ambiguity_set
from .system import Problem, assemble, gradient, objective

__all__ = [
    "BoundsResult",
    "ConfoundedMDP",
    "EmpiricalOccupancy",
    "FullInfoPolicy",
    "GridworldParams",
    "ObservedPolicy",
    "OracleParams",
    "PgdParams",
    "Problem",
    "RandomWalkParams",
    "SensitivityBounds",
    "Trajectory",
    "assemble",
    "bounds_from_gamma",
    "brute_force_bounds",
    "build_gridworld",
    "build_random_walk",
    "compute_bounds",
    "estimate_occupancy",
    "gradient",
    "gridworld_behavior",
    "gridworld_policies",
    "is_in_ambiguity_set",
    "naive_estimate",
    "objective",
    "pgd_extremum",
    "policy_value",
    "population_occupancy",
    "simulate_trajectory",
    "sweep_gamma",
    "true_marginal_weights",
]
