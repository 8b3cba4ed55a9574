"""Moment vectors, moment matrices and the weights that generate them."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Union

import numpy as np
from scipy import special, stats

from . import kernels
from .polybasis import Basis, DegreeError, build_basis, index_of


class InvalidWeightError(ValueError):
    pass


class AssumptionError(ValueError):
    """Too few distinct support points for a positive definite moment matrix."""


@dataclass(frozen=True, eq=False)
class MomentVector:
    """Moments ``E[t^alpha]`` for every multi-index of ``basis`` (degree = ``order``)."""

    basis: Basis
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        if v.shape[0] != self.basis.size:
            raise ValueError(f"{v.shape[0]} moments for a basis of size {self.basis.size}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def d(self) -> int:
        return self.basis.d

    @property
    def order(self) -> int:
        return self.basis.n

    def __getitem__(self, m) -> float:
        key = (m,) if isinstance(m, (int, np.integer)) else m
        return float(self.values[index_of(self.basis, key)])

    def truncate(self, order: int) -> "MomentVector":
        if order > self.order:
            raise DegreeError(f"moments known to order {self.order}, requested {order}")
        b = build_basis(self.d, order)
        return MomentVector(b, self.values[: b.size])

    def to_json(self) -> dict:
        return {"d": self.d, "order": self.order, "values": [float(v) for v in self.values]}

    @classmethod
    def from_json(cls, obj: dict) -> "MomentVector":
        try:
            basis = build_basis(int(obj["d"]), int(obj["order"]))
            mv = cls(basis, obj["values"])
        except KeyError as exc:
            raise ValueError(f"moment JSON is missing field {exc}") from None
        if not np.isclose(mv.values[0], 1.0, rtol=0, atol=1e-12):
            raise InvalidWeightError(f"zeroth moment must be 1, got {mv.values[0]}")
        return mv


@dataclass(frozen=True, eq=False)
class MomentMatrix:
    """Gram matrix ``H_n`` of the degree-``n`` monomials under a weight."""

    basis: Basis
    entries: np.ndarray

    def __post_init__(self):
        e = np.array(self.entries, dtype=float)
        if e.shape != (self.basis.size, self.basis.size):
            raise ValueError(f"moment matrix shape {e.shape} does not match basis")
        e.setflags(write=False)
        object.__setattr__(self, "entries", e)

    @property
    def size(self) -> int:
        return self.basis.size


# -- weights ---------------------------------------------------------------


@dataclass(frozen=True)
class StdGaussian:
    d: int = 1

    def density(self, t):
        return stats.norm.pdf(t)

    def quantile_range(self, p: float = 1e-6) -> tuple[float, float]:
        return float(stats.norm.ppf(p)), float(stats.norm.ppf(1 - p))


@dataclass(frozen=True)
class Gamma:
    """Gamma(1+q, 1) weight with density ``exp(-t) t^q / Gamma(1+q)``."""

    q: float
    d: int = 1

    def __post_init__(self):
        if not self.q > -1:
            raise InvalidWeightError(f"Gamma weight needs q > -1, got {self.q}")

    def density(self, t):
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            logpdf = -t + self.q * np.log(t) - special.gammaln(1 + self.q)
        return np.where(t > 0, np.exp(logpdf), 0.0)

    def quantile_range(self, p: float = 1e-6) -> tuple[float, float]:
        g = stats.gamma(1 + self.q)
        return float(g.ppf(p)), float(g.ppf(1 - p))


@dataclass(frozen=True, eq=False)
class Empirical:
    samples: np.ndarray

    def __post_init__(self):
        s = np.array(self.samples, dtype=float)
        if s.ndim == 1:
            s = s.reshape(-1, 1)
        if s.ndim != 2 or s.shape[0] < 1:
            raise InvalidWeightError("empirical weight needs at least one sample row")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    @property
    def d(self) -> int:
        return self.samples.shape[1]


@dataclass(frozen=True, eq=False)
class Explicit:
    moments: MomentVector

    def __post_init__(self):
        if not np.isclose(self.moments.values[0], 1.0, rtol=0, atol=1e-12):
            raise InvalidWeightError("explicit moments must have mu_0 = 1")

    @property
    def d(self) -> int:
        return self.moments.d


WeightSpec = Union[StdGaussian, Gamma, Empirical, Explicit]


def weight_to_json(w: WeightSpec) -> dict:
    if isinstance(w, StdGaussian):
        return {"type": "gaussian"}
    if isinstance(w, Gamma):
        return {"type": "gamma", "q": w.q}
    if isinstance(w, Empirical):
        return {"type": "empirical", "k": int(w.samples.shape[0]), "d": w.d}
    return {"type": "explicit", "moments": w.moments.to_json()}


# -- moment computations ---------------------------------------------------


def gaussian_moments(order: int) -> MomentVector:
    """Standard normal moments: 0 for odd powers, ``(k-1)!!`` for even."""
    if order < 0:
        raise ValueError("order must be non-negative")
    vals = np.zeros(order + 1)
    vals[0] = 1.0
    for k in range(2, order + 1, 2):
        vals[k] = vals[k - 2] * (k - 1)
    return MomentVector(build_basis(1, order), vals)


def gamma_moments(q: float, order: int) -> MomentVector:
    """Moments of Gamma(1+q, 1): ``prod_{j=1..k} (q + j)``."""
    if not q > -1:
        raise InvalidWeightError(f"Gamma weight needs q > -1, got {q}")
    if order < 0:
        raise ValueError("order must be non-negative")
    vals = np.ones(order + 1)
    for k in range(1, order + 1):
        vals[k] = vals[k - 1] * (q + k)
    return MomentVector(build_basis(1, order), vals)


def empirical_moments(samples, order: int) -> MomentVector:
    """Sample averages ``(1/k) sum_i X_i^alpha`` for all ``|alpha| <= order``."""
    x = np.ascontiguousarray(np.asarray(samples, dtype=float))
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    if x.shape[0] < 1:
        raise InvalidWeightError("need at least one sample")
    basis = build_basis(x.shape[1], order)
    sums = kernels.power_sums(x, np.ascontiguousarray(basis.exponents))
    return MomentVector(basis, sums / x.shape[0])


def distinct_count(samples) -> int:
    """Number of bitwise-distinct sample rows."""
    x = np.ascontiguousarray(np.asarray(samples, dtype=float))
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    rows = x.view(np.dtype((np.void, x.dtype.itemsize * x.shape[1])))
    return int(np.unique(rows).shape[0])


def weight_moments(weight: WeightSpec, order: int) -> MomentVector:
    if isinstance(weight, StdGaussian):
        return gaussian_moments(order)
    if isinstance(weight, Gamma):
        return gamma_moments(weight.q, order)
    if isinstance(weight, Empirical):
        return empirical_moments(weight.samples, order)
    if isinstance(weight, Explicit):
        return weight.moments.truncate(order)
    raise TypeError(f"unknown weight {weight!r}")


def moment_matrix(mu: MomentVector, basis: Basis) -> MomentMatrix:
    """``H[i, j] = mu[alpha_i + alpha_j]``."""
    if mu.d != basis.d:
        raise ValueError("moment vector and basis have different dimensions")
    if mu.order < 2 * basis.n:
        raise DegreeError(
            f"moment matrix of degree {basis.n} needs moments to order {2 * basis.n}, "
            f"have {mu.order}"
        )
    exps = basis.exponents
    idx = np.empty((basis.size, basis.size), dtype=np.int64)
    for i in range(basis.size):
        for j in range(i, basis.size):
            idx[i, j] = idx[j, i] = index_of(mu.basis, exps[i] + exps[j])
    return MomentMatrix(basis, mu.values[idx])


class PDCheck(NamedTuple):
    is_pd: bool
    min_eigenvalue: float


def check_pd(H: MomentMatrix | np.ndarray, tol: float = 1e-10) -> PDCheck:
    """PD test: smallest eigenvalue above ``tol`` times the largest."""
    a = H.entries if isinstance(H, MomentMatrix) else np.asarray(H, dtype=float)
    w = np.linalg.eigvalsh(a)
    scale = max(abs(w[-1]), np.finfo(float).tiny)
    return PDCheck(bool(w[0] > tol * scale), float(w[0]))


def require_support(samples, basis: Basis) -> int:
    """Raise unless the samples have at least ``N+1`` distinct rows."""
    k_star = distinct_count(samples)
    if k_star < basis.size:
        raise AssumptionError(
            f"cardinality of support: {k_star} distinct sample points, but degree "
            f"{basis.n} in {basis.d} dimension(s) needs at least {basis.size}"
        )
    return k_star


def moment_matrix_for(weight: WeightSpec, basis: Basis) -> MomentMatrix:
    if isinstance(weight, Empirical):
        require_support(weight.samples, basis)
    return moment_matrix(weight_moments(weight, 2 * basis.n), basis)

