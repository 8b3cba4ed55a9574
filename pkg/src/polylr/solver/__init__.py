"""Conic program for minimum-norm non-negative polynomials."""

from .ipm import Settings
from .problem import (
    DEFAULT_C,
    ConicProblem,
    DualData,
    EmbeddedSolver,
    Solution,
    SolverAdapter,
    Status,
    assemble_dual,
    dual_cone_margin,
    dual_objective,
    duality_gap,
    find_certificate,
    kkt_residuals,
    recover_primal_from_dual,
    relative_gap,
    solve_primal,
)

__all__ = [
    "DEFAULT_C",
    "ConicProblem",
    "DualData",
    "EmbeddedSolver",
    "Settings",
    "Solution",
    "SolverAdapter",
    "Status",
    "assemble_dual",
    "dual_cone_margin",
    "dual_objective",
    "duality_gap",
    "find_certificate",
    "kkt_residuals",
    "recover_primal_from_dual",
    "relative_gap",
    "solve_primal",
]
