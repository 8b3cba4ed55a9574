"""Non-negative Hansen-Jagannathan pricing kernels from a panel of excess returns.

The empirical measure of the panel is the weight, so every inner product is a
sample average. The kernel prices all assets, ``E[xi R_i] = 0``, has unit
mean, and is non-negative on the observed return vectors.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .moments import AssumptionError, Empirical, MomentMatrix, moment_matrix_for, require_support
from .plr import (
    ConstraintSpec,
    InfeasibleError,
    PLRModel,
    SolverError,
    build_problem,
    decompose,
    fms_constrained,
    h_norm,
)
from .polybasis import Polynomial, build_basis
from .solver import ConicProblem, Status, solve_primal
from .sos_cones import RealSpace, Support

DOMAINS = ("support", "Rd")


class PanelError(ValueError):
    pass


class ConsistencyError(RuntimeError):
    """A fitted unit-mean kernel with ``E[xi^2] < 1``: a bookkeeping bug."""


@dataclass(frozen=True, eq=False)
class ReturnsPanel:
    data: np.ndarray
    asset_names: tuple[str, ...]

    def __post_init__(self):
        a = np.array(self.data, dtype=float)
        if a.ndim == 1:
            a = a.reshape(-1, 1)
        if a.ndim != 2 or a.shape[0] == 0:
            raise PanelError("returns must be a non-empty k x d matrix")
        if not np.isfinite(a).all():
            raise PanelError("returns contain non-finite values")
        names = tuple(self.asset_names)
        if len(names) != a.shape[1]:
            raise PanelError(f"{len(names)} asset names for {a.shape[1]} columns")
        a.setflags(write=False)
        object.__setattr__(self, "data", a)
        object.__setattr__(self, "asset_names", names)

    @property
    def k(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]

    @classmethod
    def from_array(cls, data, names: Sequence[str] | None = None) -> "ReturnsPanel":
        a = np.asarray(data, dtype=float)
        d = 1 if a.ndim == 1 else a.shape[1]
        return cls(a, tuple(names) if names is not None else tuple(f"R{i + 1}" for i in range(d)))

    @classmethod
    def from_csv(cls, path) -> "ReturnsPanel":
        """Header row of asset names, then one row of excess returns per period."""
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise PanelError(f"{path}: empty file")
        names = [h.strip() for h in rows[0]]
        if not names or any(not h for h in names):
            raise PanelError(f"{path}: line 1: header with asset names required")
        try:
            [float(h) for h in names]
        except ValueError:
            pass
        else:
            raise PanelError(f"{path}: line 1: header with asset names required")
        data = []
        for ln, row in enumerate(rows[1:], start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(names):
                raise PanelError(f"{path}: line {ln}: expected {len(names)} fields, got {len(row)}")
            try:
                vals = [float(c) for c in row]
            except ValueError:
                raise PanelError(f"{path}: line {ln}: non-numeric cell") from None
            if not all(math.isfinite(v) for v in vals):
                raise PanelError(f"{path}: line {ln}: non-finite value")
            data.append(vals)
        if not data:
            raise PanelError(f"{path}: no data rows")
        return cls(np.array(data), tuple(names))


def pricing_constraints(d: int) -> ConstraintSpec:
    """``(xi, 1) = 1`` and ``(xi, R_i) = 0`` for every asset."""
    b = build_basis(d, 1)
    eqs = [(Polynomial.constant(b), 1.0)]
    eye = np.eye(d, dtype=int)
    eqs += [(Polynomial.from_terms(b, {tuple(eye[i]): 1.0}), 0.0) for i in range(d)]
    return ConstraintSpec(tuple(eqs))


def _domain(panel: ReturnsPanel, domain: str):
    if domain == "support":
        return Support(panel.data)
    if domain == "Rd":
        return RealSpace(panel.d)
    raise ValueError(f"domain must be one of {DOMAINS}, got {domain!r}")


@dataclass(frozen=True, eq=False)
class HJProblem:
    panel: ReturnsPanel
    n: int
    domain: str
    problem: ConicProblem
    constraints: ConstraintSpec
    weight: Empirical
    H: MomentMatrix


def build_hj_problem(panel: ReturnsPanel, n: int = 2, domain: str = "support") -> HJProblem:
    """The pricing program of degree ``n``.

    ``domain="support"`` requires non-negativity at the observed returns (the
    support of the empirical measure); ``"Rd"`` on all of ``R^d``.

    Raises:
        AssumptionError: fewer than ``N+1`` distinct return vectors.
    """
    basis = build_basis(panel.d, n)
    require_support(panel.data, basis)
    weight = Empirical(panel.data)
    H = moment_matrix_for(weight, basis)
    cons = pricing_constraints(panel.d)
    p = build_problem(H, cons, _domain(panel, domain))
    return HJProblem(panel, n, domain, p, cons, weight, H)


@dataclass(frozen=True, eq=False)
class KernelFit:
    plr: PLRModel
    eta: np.ndarray
    nu: np.ndarray
    linear: Polynomial
    panel: ReturnsPanel

    @property
    def hj_bound_plr(self) -> float:
        return hj_bound(self.plr)

    @property
    def hj_bound_linear(self) -> float:
        return _bound(h_norm(self.plr.H, self.plr.xi_star) ** 2)

    @property
    def pricing_residuals(self) -> np.ndarray:
        return pricing_residuals(self.plr.xi, self.panel)

    def to_json(self) -> dict:
        return {
            "kernel": self.plr.to_json(),
            "eta": self.eta.tolist(),
            "nu": self.nu.tolist(),
            "hj_bound_linear": self.hj_bound_linear,
            "hj_bound_plr": self.hj_bound_plr,
            "pricing_residuals": self.pricing_residuals.tolist(),
            "asset_names": list(self.panel.asset_names),
        }


def pricing_residuals(xi: Polynomial, panel: ReturnsPanel) -> np.ndarray:
    """``(E[xi] - 1, E[xi R_1], ..., E[xi R_d])`` as direct sample averages."""
    v = xi(panel.data)
    return np.concatenate([[v.mean() - 1.0], (v[:, None] * panel.data).mean(axis=0)])


def solve_kernel(hj: HJProblem, **solve_kwargs) -> KernelFit:
    """Fit the PLR kernel; the dual weights ``(eta, nu)`` are the portfolio."""
    sol = solve_primal(hj.problem, **solve_kwargs)
    if sol.status is not Status.OPTIMAL:
        if sol.status is Status.INFEASIBLE:
            raise InfeasibleError("no non-negative kernel prices the panel", sol, hj.n)
        raise SolverError(f"solver stopped with status {sol.status.value}", sol)
    basis = hj.H.basis
    xi = Polynomial(basis, sol.x)
    xs, xc = decompose(xi, hj.constraints, hj.H)
    model = PLRModel(basis, hj.weight, _domain(hj.panel, hj.domain), xi, xs, xc, sol,
                     hj.H, hj.constraints)
    if h_norm(hj.H, xi) ** 2 < 1.0 - 1e-9:
        raise ConsistencyError(f"unit-mean kernel with E[xi^2] = {h_norm(hj.H, xi) ** 2}")
    return KernelFit(model, sol.eta, sol.nu, hj_linear_solution(hj.panel), hj.panel)


def hj_linear_solution(panel: ReturnsPanel) -> Polynomial:
    """Minimum-norm kernel in ``span{1, R_1..R_d}`` pricing the panel (sign unrestricted)."""
    basis = build_basis(panel.d, 1)
    weight = Empirical(panel.data)
    try:
        H = moment_matrix_for(weight, basis)
    except AssumptionError as exc:
        raise PanelError(f"singular second-moment matrix: {exc}") from None
    try:
        return fms_constrained(H, pricing_constraints(panel.d))
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise PanelError(f"singular second-moment matrix: {exc}") from None


def _bound(sq: float) -> float:
    if sq < 1.0 - 1e-9:
        raise ConsistencyError(f"unit-mean kernel with E[xi^2] = {sq} < 1")
    return math.sqrt(max(sq - 1.0, 0.0))


def hj_bound(model: PLRModel) -> float:
    """``sqrt(E[xi^2] - 1)``, the maximal Sharpe ratio the kernel admits."""
    return _bound(model.norm**2)


def fit_kernel(panel: ReturnsPanel, n: int = 2, domain: str = "support") -> KernelFit:
    return solve_kernel(build_hj_problem(panel, n, domain))


__all__ = [
    "ConsistencyError",
    "HJProblem",
    "KernelFit",
    "PanelError",
    "ReturnsPanel",
    "build_hj_problem",
    "fit_kernel",
    "hj_bound",
    "hj_linear_solution",
    "pricing_constraints",
    "pricing_residuals",
    "solve_kernel",
]
