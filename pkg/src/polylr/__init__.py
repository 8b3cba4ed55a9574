"""Non-negative polynomial likelihood ratios (PLR) from moment constraints."""

__version__ = "0.1.0"

from .polybasis import Basis, Polynomial, build_basis, evaluate, index_of, multiply
from .moments import (
    Empirical,
    Explicit,
    Gamma,
    MomentMatrix,
    MomentVector,
    StdGaussian,
    check_pd,
    empirical_moments,
    gamma_moments,
    gaussian_moments,
    moment_matrix,
    moment_matrix_for,
)
from .sos_cones import HalfLine, Interval, RealLine, RealSpace, Support, structure_for
from .solver import ConicProblem, Solution, Status, solve_primal
from .plr import ConstraintSpec, PLRModel, fit, fms_project

__all__ = [
    "Basis",
    "ConicProblem",
    "ConstraintSpec",
    "Empirical",
    "Explicit",
    "Gamma",
    "HalfLine",
    "Interval",
    "MomentMatrix",
    "MomentVector",
    "PLRModel",
    "Polynomial",
    "RealLine",
    "RealSpace",
    "Solution",
    "Status",
    "StdGaussian",
    "Support",
    "build_basis",
    "check_pd",
    "empirical_moments",
    "evaluate",
    "fit",
    "fms_project",
    "gamma_moments",
    "gaussian_moments",
    "index_of",
    "moment_matrix",
    "moment_matrix_for",
    "multiply",
    "solve_primal",
    "structure_for",
]
