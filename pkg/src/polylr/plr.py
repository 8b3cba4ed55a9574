"""Minimum-norm non-negative likelihood ratios.

Given a weight ``z`` with moment matrix ``H`` and linear constraints
``(xi, f_i)_z = c_i``, ``(xi, g_j)_z <= d_j``, the PLR is the polynomial of
smallest ``H``-norm satisfying them that is also non-negative on the domain.
Its coefficients split as ``x = x* + x°``: the ``H``-orthogonal projection onto
the span of the constraint polynomials plus the correction that restores
positivity.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg

from .moments import (
    Empirical,
    Explicit,
    Gamma,
    MomentMatrix,
    MomentVector,
    StdGaussian,
    WeightSpec,
    moment_matrix_for,
    weight_moments,
    weight_to_json,
)
from .polybasis import Basis, Polynomial, build_basis
from .solver import ConicProblem, Solution, Status, solve_primal
from .solver.ipm import Settings
from .solver.problem import DEFAULT_C, _h_solve
from .sos_cones import (
    Domain,
    HalfLine,
    Interval,
    RealLine,
    RealSpace,
    Support,
    domain_to_json,
    selection_maps,
    structure_for,
)

log = logging.getLogger(__name__)

GRID_POINTS = 10_000


class InfeasibleError(RuntimeError):
    """No non-negative polynomial of this degree meets the constraints."""

    def __init__(self, message: str, solution: Solution | None = None, n: int | None = None):
        super().__init__(message)
        self.solution = solution
        self.n = n


class SolverError(RuntimeError):
    def __init__(self, message: str, solution: Solution | None = None):
        super().__init__(message)
        self.solution = solution


class UnsupportedWeightError(TypeError):
    pass


# -- constraints -------------------------------------------------------------


@dataclass(frozen=True)
class ConstraintSpec:
    """Equalities ``(xi, f) = c`` and inequalities ``(xi, g) <= d``.

    By convention the first equality is the unit-mass condition ``(xi, 1) = 1``.
    """

    equalities: tuple = ()
    inequalities: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "equalities", tuple((f, float(c)) for f, c in self.equalities))
        object.__setattr__(self, "inequalities", tuple((g, float(d)) for g, d in self.inequalities))
        if not self.equalities and not self.inequalities:
            raise ValueError("at least one constraint is required")
        dims = {p.basis.d for p, _ in self.equalities + self.inequalities}
        if len(dims) > 1:
            raise ValueError("constraint polynomials live in different dimensions")

    @property
    def d(self) -> int:
        return (self.equalities + self.inequalities)[0][0].basis.d

    @property
    def degree(self) -> int:
        return max(p.degree for p, _ in self.equalities + self.inequalities)

    @classmethod
    def moments(cls, values: Sequence[float], d: int = 1, inequalities=()) -> "ConstraintSpec":
        """Match ``E[t^alpha]`` for the first ``len(values)`` monomials of the graded basis."""
        values = list(values)
        n = 0
        while build_basis(d, n).size < len(values):
            n += 1
        basis = build_basis(d, n)
        eqs = [(Polynomial.from_terms(basis, {i: 1.0}), v) for i, v in enumerate(values)]
        return cls(tuple(eqs), tuple(inequalities))

    def rows(self, basis: Basis):
        """``(S, c, U, d)`` with polynomial coefficients embedded in ``basis``."""
        def stack(items):
            if not items:
                return np.zeros((0, basis.size)), np.zeros(0)
            M = np.array([p.embed(basis).coeffs for p, _ in items])
            return M, np.array([v for _, v in items])

        S, c = stack(self.equalities)
        U, d = stack(self.inequalities)
        return S, c, U, d

    def to_json(self) -> dict:
        return {
            "equalities": [{"f": f.to_json(), "c": c} for f, c in self.equalities],
            "inequalities": [{"g": g.to_json(), "d": d} for g, d in self.inequalities],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ConstraintSpec":
        try:
            eqs = [(Polynomial.from_json(e["f"]), e["c"]) for e in obj.get("equalities", [])]
            ins = [(Polynomial.from_json(e["g"]), e["d"]) for e in obj.get("inequalities", [])]
        except KeyError as exc:
            raise ValueError(f"constraint JSON is missing field {exc}") from None
        return cls(tuple(eqs), tuple(ins))


# -- kernel and projections --------------------------------------------------


def _entries(H) -> np.ndarray:
    return H.entries if isinstance(H, MomentMatrix) else np.asarray(H, dtype=float)


def _cholesky(H: np.ndarray):
    if not np.all(np.diag(H) > 0):
        raise ValueError("moment matrix is singular or not positive definite")
    dx = 1.0 / np.sqrt(np.diag(H))
    try:
        return linalg.cho_factor(H * np.outer(dx, dx)), dx
    except linalg.LinAlgError:
        raise ValueError("moment matrix is singular or not positive definite") from None


def kernel_matrix_inverse(H: MomentMatrix) -> np.ndarray:
    """``H^{-1}``, the coefficient matrix of the reproducing kernel."""
    a = _entries(H)
    if np.any(np.diag(a) <= 0):
        raise ValueError("moment matrix is singular or not positive definite")
    _cholesky(a)
    return _h_solve(a, np.eye(a.shape[0]))


def kernel_eval(H: MomentMatrix, s, t) -> float:
    """Reproducing kernel ``k(s, t) = tau(s)' H^{-1} tau(t)``."""
    a = _entries(H)
    cf, dx = _cholesky(a)
    basis = H.basis
    ts = basis.design_matrix(s)[0]
    tt = basis.design_matrix(t)[0]
    return float(ts @ (dx * linalg.cho_solve(cf, dx * tt)))


def fms_project(mu_q: MomentVector, H: MomentMatrix) -> Polynomial:
    """Minimum-norm polynomial matching all moments of the basis: ``H^{-1} mu_q``."""
    basis = H.basis
    if mu_q.d != basis.d:
        raise ValueError("moment vector and moment matrix have different dimensions")
    if mu_q.order > basis.n:
        mu_q = mu_q.truncate(basis.n)
    if mu_q.basis.size != basis.size:
        raise ValueError(f"need moments up to order {basis.n}, have {mu_q.order}")
    a = _entries(H)
    _cholesky(a)
    return Polynomial(basis, _h_solve(a, mu_q.values))


def _projector_rows(B: np.ndarray, H: np.ndarray):
    G = B @ H @ B.T
    if B.shape[0] and np.linalg.matrix_rank(G) < B.shape[0]:
        raise ValueError("constraint polynomials are linearly dependent")
    return G


def fms_constrained(H: MomentMatrix, constraints: ConstraintSpec) -> Polynomial:
    """Minimum-norm polynomial meeting the equalities, ignoring positivity.

    This is the unconstrained-cone counterpart of the PLR (the FMS solution
    when the constraints are moment conditions).
    """
    basis = H.basis
    S, c, _, _ = constraints.rows(basis)
    a = _entries(H)
    G = _projector_rows(S, a)
    return Polynomial(basis, S.T @ np.linalg.solve(G, c))


def decompose(x, constraints: ConstraintSpec, H: MomentMatrix,
              active_inequalities: Sequence[bool] | None = None):
    """Split ``x`` into its projection onto the constraint span and the rest.

    ``K`` is spanned by every equality and inequality polynomial unless
    ``active_inequalities`` selects a subset of the inequalities.
    """
    basis = H.basis
    x = np.asarray(x.coeffs if isinstance(x, Polynomial) else x, dtype=float)
    S, _, U, _ = constraints.rows(basis)
    if active_inequalities is not None:
        U = U[np.asarray(active_inequalities, dtype=bool)]
    B = np.vstack([S, U])
    a = _entries(H)
    G = _projector_rows(B, a)
    x_star = B.T @ np.linalg.solve(G, B @ (a @ x)) if B.shape[0] else np.zeros_like(x)
    return Polynomial(basis, x_star), Polynomial(basis, x - x_star)


def h_inner(H: MomentMatrix, p, q) -> float:
    a = _entries(H)
    pc = p.coeffs if isinstance(p, Polynomial) else np.asarray(p, dtype=float)
    qc = q.coeffs if isinstance(q, Polynomial) else np.asarray(q, dtype=float)
    return float(pc @ a @ qc)


def h_norm(H: MomentMatrix, p) -> float:
    return math.sqrt(max(h_inner(H, p, p), 0.0))


# -- grids -------------------------------------------------------------------


def _explicit_range(mu: MomentVector) -> tuple[float, float]:
    m1 = mu.values[1]
    var = mu.values[2] - m1**2 if mu.order >= 2 else 1.0
    sd = math.sqrt(max(var, 1e-12))
    return m1 - 10 * sd, m1 + 10 * sd


def grid_points(weight: WeightSpec, domain: Domain, n_points: int = GRID_POINTS,
                seed: int = 0) -> np.ndarray:
    """Points for an independent non-negativity check.

    Uniform on ``[a, b]`` for intervals; otherwise on the weight's
    ``(1e-6, 1 - 1e-6)`` quantile range clipped to the domain. Empirical
    weights use the sample range; ``d >= 2`` adds the samples themselves.
    """
    if isinstance(domain, Support):
        return domain.points
    d = domain.d
    if d == 1:
        if isinstance(domain, Interval):
            return np.linspace(domain.a, domain.b, n_points)
        if isinstance(weight, (StdGaussian, Gamma)):
            lo, hi = weight.quantile_range(1e-6)
        elif isinstance(weight, Empirical):
            lo, hi = float(weight.samples.min()), float(weight.samples.max())
        else:
            lo, hi = _explicit_range(weight_moments(weight, 2))
        if isinstance(domain, HalfLine):
            lo = max(lo, domain.a)
            if hi <= lo:
                hi = lo + 1.0
        return np.linspace(lo, hi, n_points)
    rng = np.random.default_rng(seed)
    if isinstance(weight, Empirical):
        pts = weight.samples
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        extra = rng.uniform(lo, hi, size=(max(n_points - pts.shape[0], 0), d))
        return np.vstack([pts, extra])[: max(n_points, pts.shape[0])]
    box = 5.0 if isinstance(weight, StdGaussian) else 10.0
    return rng.uniform(-box, box, size=(n_points, d))


def grid_min(p: Polynomial, weight: WeightSpec, domain: Domain,
             n_points: int = GRID_POINTS) -> float:
    return float(np.min(p(grid_points(weight, domain, n_points))))


# -- the model ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PLRModel:
    basis: Basis
    weight: WeightSpec
    domain: Domain
    xi: Polynomial
    xi_star: Polynomial
    xi_circ: Polynomial
    solution: Solution
    H: MomentMatrix = field(repr=False)
    constraints: ConstraintSpec = field(repr=False)

    @property
    def norm(self) -> float:
        return h_norm(self.H, self.xi)

    @property
    def correction_norm(self) -> float:
        return h_norm(self.H, self.xi_circ)

    def grid_min(self, n_points: int = GRID_POINTS) -> float:
        return grid_min(self.xi, self.weight, self.domain, n_points)

    def to_json(self) -> dict:
        return {
            "xi": self.xi.to_json(),
            "xi_star": self.xi_star.to_json(),
            "xi_circ": self.xi_circ.to_json(),
            "solution": self.solution.to_json(),
            "weight": weight_to_json(self.weight),
            "domain": domain_to_json(self.domain),
        }


def build_problem(H: MomentMatrix, constraints: ConstraintSpec, domain: Domain,
                  C: float = DEFAULT_C) -> ConicProblem:
    basis = H.basis
    if constraints.d != basis.d:
        raise ValueError(f"constraints are in {constraints.d} dimension(s), basis in {basis.d}")
    if constraints.degree > basis.n:
        raise ValueError(f"constraint degree {constraints.degree} exceeds n={basis.n}")
    S, c, U, d = constraints.rows(basis)
    if isinstance(domain, Support):
        if domain.d != basis.d:
            raise ValueError("support points have the wrong dimension")
        return ConicProblem(H, S, c, U, d, C=C, support=basis.design_matrix(domain.points))
    if domain.d != basis.d:
        raise ValueError(f"domain is {domain.d}-dimensional, basis {basis.d}-dimensional")
    s = structure_for(domain, basis.n)
    return ConicProblem(H, S, c, U, d, sos=s, maps=selection_maps(s, basis), C=C)


def fit(weight: WeightSpec, constraints: ConstraintSpec, n: int, domain: Domain,
        C: float = DEFAULT_C, settings: Settings | None = None,
        include_all: bool = True, H: MomentMatrix | None = None) -> PLRModel:
    """Fit the PLR of degree ``n``.

    Raises:
        AssumptionError: an empirical weight has fewer than ``N+1`` distinct points.
        InfeasibleError: no non-negative polynomial of degree ``n`` fits.
        SolverError: the solver stopped without a verified optimum.
    """
    basis = build_basis(constraints.d, n)
    if H is None:
        H = moment_matrix_for(weight, basis)
    p = build_problem(H, constraints, domain, C)
    sol = solve_primal(p, settings=settings)
    if sol.status is Status.INFEASIBLE:
        raise InfeasibleError(
            f"no non-negative polynomial of degree {n} satisfies the constraints", sol, n
        )
    if sol.status is not Status.OPTIMAL:
        raise SolverError(f"solver stopped with status {sol.status.value}", sol)
    xi = Polynomial(basis, sol.x)
    active = None
    if not include_all and p.U.shape[0]:
        slack = p.d - p.U @ (p.H @ sol.x)
        active = sol.eps > slack
    xs, xc = decompose(xi, constraints, H, active)
    return PLRModel(basis, weight, domain, xi, xs, xc, sol, H, constraints)


def fit_escalating(weight: WeightSpec, constraints: ConstraintSpec, n: int, domain: Domain,
                   max_extra: int = 6, step: int = 2, **kwargs) -> PLRModel:
    """:func:`fit`, retrying with ``n + step`` on infeasibility up to ``n + max_extra``."""
    last = None
    for deg in range(n, n + max_extra + 1, step):
        try:
            model = fit(weight, constraints, deg, domain, **kwargs)
        except InfeasibleError as exc:
            log.info("degree %d infeasible, raising the degree", deg)
            last = exc
            continue
        log.info("degree %d feasible", deg)
        return model
    raise last


def tilt_density(model: PLRModel, t):
    """``xi(t) z(t)``, the tilted density (needs a weight with a density)."""
    if not isinstance(model.weight, (StdGaussian, Gamma)) or model.basis.d != 1:
        raise UnsupportedWeightError(
            f"{type(model.weight).__name__} weight has no density to tilt"
        )
    t = np.asarray(t, dtype=float)
    vals = model.xi(t.reshape(-1)) * model.weight.density(t.reshape(-1))
    return float(vals[0]) if t.ndim == 0 else vals.reshape(t.shape)


__all__ = [
    "ConstraintSpec",
    "InfeasibleError",
    "PLRModel",
    "SolverError",
    "UnsupportedWeightError",
    "build_problem",
    "decompose",
    "fit",
    "fit_escalating",
    "fms_constrained",
    "fms_project",
    "grid_min",
    "grid_points",
    "h_inner",
    "h_norm",
    "kernel_eval",
    "kernel_matrix_inverse",
    "tilt_density",
]
