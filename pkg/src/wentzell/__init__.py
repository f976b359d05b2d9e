"""Null/approximate controllability of heat equations with dynamic boundary conditions.

Finite-volume discretization of the bulk-surface system, exact discrete
adjoints, a proximal solver for the dual control functional, explicit cost
bounds, Carleman/observability diagnostics and a fixed-point solver for
semilinear problems.
"""
__version__ = "0.1.0"

from .errors import (ConfigError, DataError, GeometryError, NonConvergenceError, ParameterError, SolverError,
                     WentzellError)
from .grid import StatePair, SpaceTimeField, make_grid, norm_mu, sobolev_norms
from .operators import CoefficientSet, assemble, control_mask
from .forward import TimeSchedule, solve_forward
from .adjoint import solve_adjoint
from .control import ControlOptions, gramian_apply, gramian_dense, minimize_J, reduce_target
from .bounds import BoundInputs, calibrate_kappa, eval_cost_bound
from .carleman import build_morse, carleman_ratio, empirical_obs_constant
from .semilinear import Nonlinearity, PicardOptions, Term, picard_control

__all__ = [
    "__version__",
    "WentzellError", "ConfigError", "ParameterError", "DataError", "GeometryError", "SolverError",
    "NonConvergenceError",
    "make_grid", "StatePair", "SpaceTimeField", "norm_mu", "sobolev_norms",
    "CoefficientSet", "assemble", "control_mask",
    "TimeSchedule", "solve_forward", "solve_adjoint",
    "ControlOptions", "gramian_apply", "gramian_dense", "minimize_J", "reduce_target",
    "BoundInputs", "eval_cost_bound", "calibrate_kappa",
    "build_morse", "carleman_ratio", "empirical_obs_constant",
    "Term", "Nonlinearity", "PicardOptions", "picard_control",
]
