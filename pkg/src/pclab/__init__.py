"""Optimal control of a 1D Allen-Cahn equation.

Three solution paths on a shared finite-difference baseline: discrete-adjoint
gradient descent on the fully discrete objective, a direct PINN that minimizes
the penalized cost, and an indirect PINN that solves the first-order optimality
system.
"""

from .config import (CollocationConfig, ExperimentConfig, FieldSemantics,
                     GridField, GridSpec, LossWeights, ProblemSpec,
                     ReactionKind, ReactionTerm, SpecValidationError,
                     coarse_experiment, default_allen_cahn, default_experiment,
                     desk_experiment, load_config)
from .fd_solver import (BlowUpError, ObjectiveBreakdown, StateTrajectory,
                        objective, solve_state, trapezoid_objective)

__version__ = "0.1.0"

__all__ = [
    "BlowUpError",
    "CollocationConfig",
    "ExperimentConfig",
    "FieldSemantics",
    "GridField",
    "GridSpec",
    "LossWeights",
    "ObjectiveBreakdown",
    "ProblemSpec",
    "ReactionKind",
    "ReactionTerm",
    "SpecValidationError",
    "StateTrajectory",
    "__version__",
    "coarse_experiment",
    "default_allen_cahn",
    "default_experiment",
    "desk_experiment",
    "load_config",
    "objective",
    "solve_state",
    "trapezoid_objective",
]
