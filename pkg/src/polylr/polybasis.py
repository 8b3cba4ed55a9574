"""Graded monomial bases and dense polynomials in them.

Monomials are ordered by total degree and, within a degree, lexicographically
with the exponent of ``t1`` taking priority (largest first)::

    1, t1, ..., td, t1^2, t1 t2, ..., td^2, ..., t1^n, ..., td^n

Every coefficient vector in this package uses that order.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

MultiIndex = tuple[int, ...]


class DegreeError(ValueError):
    """A multi-index or product does not fit in the target basis."""


def _compositions(total: int, d: int) -> Iterator[MultiIndex]:
    # Exponent vectors of a fixed total degree, t1-priority lexicographic descending.
    if d == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, d - 1):
            yield (first,) + rest


@dataclass(frozen=True)
class Basis:
    """Monomial basis of polynomials in ``d`` variables up to degree ``n``."""

    d: int
    n: int
    order: tuple[MultiIndex, ...] = field(repr=False)
    _index: dict = field(repr=False, compare=False, hash=False)

    def __len__(self) -> int:
        return len(self.order)

    @property
    def size(self) -> int:
        return len(self.order)

    @property
    def exponents(self) -> np.ndarray:
        """``(N+1, d)`` integer array of exponents."""
        return _exponent_array(self)

    def degrees(self) -> np.ndarray:
        return self.exponents.sum(axis=1)

    def index_of(self, m: Sequence[int]) -> int:
        return index_of(self, m)

    def design_matrix(self, points) -> np.ndarray:
        """Rows ``tau(p)`` for each point, shape ``(k, N+1)``."""
        pts = _as_points(points, self.d)
        return _monomials(pts, self.exponents)


@functools.lru_cache(maxsize=None)
def build_basis(d: int, n: int) -> Basis:
    """Return the graded basis for ``d`` variables and maximal degree ``n``."""
    if int(d) != d or d < 1:
        raise ValueError(f"dimension must be a positive integer, got {d!r}")
    if int(n) != n or n < 0:
        raise ValueError(f"degree must be a non-negative integer, got {n!r}")
    d, n = int(d), int(n)
    order = tuple(m for deg in range(n + 1) for m in _compositions(deg, d))
    assert len(order) == math.comb(n + d, d)
    return Basis(d=d, n=n, order=order, _index={m: i for i, m in enumerate(order)})


@functools.lru_cache(maxsize=None)
def _exponent_array(basis: Basis) -> np.ndarray:
    arr = np.array(basis.order, dtype=np.int64).reshape(len(basis.order), basis.d)
    arr.setflags(write=False)
    return arr


def index_of(basis: Basis, m: Sequence[int]) -> int:
    """Ordinal of multi-index ``m`` in ``basis``."""
    key = tuple(int(v) for v in m)
    if len(key) != basis.d:
        raise ValueError(f"multi-index {key} has length {len(key)}, basis has d={basis.d}")
    if any(v < 0 for v in key):
        raise ValueError(f"negative exponent in {key}")
    if sum(key) > basis.n:
        raise DegreeError(f"multi-index {key} has degree {sum(key)} > {basis.n}")
    return basis._index[key]


def _as_points(points, d: int) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 0:
        pts = pts.reshape(1, 1)
    elif pts.ndim == 1:
        pts = pts.reshape(-1, 1) if d == 1 else pts.reshape(1, -1)
    if pts.shape[1] != d:
        raise ValueError(f"points have dimension {pts.shape[1]}, expected {d}")
    return pts


def _monomials(pts: np.ndarray, exps: np.ndarray) -> np.ndarray:
    maxdeg = int(exps.max()) if exps.size else 0
    # powers[k, j, e] = pts[k, j] ** e, built by repeated multiplication
    powers = np.empty(pts.shape + (maxdeg + 1,))
    powers[..., 0] = 1.0
    for e in range(1, maxdeg + 1):
        powers[..., e] = powers[..., e - 1] * pts
    out = np.ones((pts.shape[0], exps.shape[0]))
    for j in range(pts.shape[1]):
        out *= powers[:, j, exps[:, j]]
    return out


@dataclass(frozen=True, eq=False)
class Polynomial:
    """Dense polynomial ``x^T tau_n`` over a :class:`Basis`."""

    basis: Basis
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float).reshape(-1)
        if c.shape[0] != self.basis.size:
            raise ValueError(
                f"{c.shape[0]} coefficients for a basis of size {self.basis.size}"
            )
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def from_terms(cls, basis: Basis, terms: dict) -> "Polynomial":
        """Build from ``{multi-index: coefficient}``; univariate keys may be ints."""
        c = np.zeros(basis.size)
        for m, v in terms.items():
            key = (m,) if isinstance(m, (int, np.integer)) else m
            c[index_of(basis, key)] += v
        return cls(basis, c)

    @classmethod
    def constant(cls, basis: Basis, value: float = 1.0) -> "Polynomial":
        c = np.zeros(basis.size)
        c[0] = value
        return cls(basis, c)

    @property
    def degree(self) -> int:
        nz = np.flatnonzero(self.coeffs)
        if nz.size == 0:
            return 0
        return int(self.basis.degrees()[nz].max())

    def __call__(self, points):
        return evaluate(self, points)

    def __add__(self, other: "Polynomial") -> "Polynomial":
        _check_same_basis(self, other)
        return Polynomial(self.basis, self.coeffs + other.coeffs)

    def __sub__(self, other: "Polynomial") -> "Polynomial":
        _check_same_basis(self, other)
        return Polynomial(self.basis, self.coeffs - other.coeffs)

    def __neg__(self) -> "Polynomial":
        return Polynomial(self.basis, -self.coeffs)

    def scale(self, a: float) -> "Polynomial":
        return Polynomial(self.basis, a * self.coeffs)

    def embed(self, target: Basis) -> "Polynomial":
        """Re-express in a (larger) basis with the same dimension."""
        if target.d != self.basis.d:
            raise ValueError("dimension mismatch")
        c = np.zeros(target.size)
        for i, m in enumerate(self.basis.order):
            if self.coeffs[i] != 0.0:
                c[index_of(target, m)] = self.coeffs[i]
        return Polynomial(target, c)

    def allclose(self, other: "Polynomial", atol: float = 1e-12) -> bool:
        _check_same_basis(self, other)
        return bool(np.allclose(self.coeffs, other.coeffs, rtol=0.0, atol=atol))

    def to_json(self) -> dict:
        return {"d": self.basis.d, "n": self.basis.n, "coeffs": [float(v) for v in self.coeffs]}

    @classmethod
    def from_json(cls, obj: dict) -> "Polynomial":
        return cls(build_basis(int(obj["d"]), int(obj["n"])), obj["coeffs"])


def _check_same_basis(p: Polynomial, q: Polynomial) -> None:
    if p.basis != q.basis:
        raise ValueError("polynomials live in different bases")


def multiply(p: Polynomial, q: Polynomial, target_basis: Basis | None = None) -> Polynomial:
    """Product ``p*q`` expressed in ``target_basis``."""
    if p.basis.d != q.basis.d:
        raise ValueError("dimension mismatch")
    if target_basis is None:
        target_basis = build_basis(p.basis.d, p.degree + q.degree)
    if target_basis.d != p.basis.d:
        raise ValueError("dimension mismatch")
    if p.degree + q.degree > target_basis.n:
        raise DegreeError(
            f"product degree {p.degree + q.degree} exceeds basis degree {target_basis.n}"
        )
    out = np.zeros(target_basis.size)
    pe, qe = p.basis.exponents, q.basis.exponents
    for i in np.flatnonzero(p.coeffs):
        for j in np.flatnonzero(q.coeffs):
            out[index_of(target_basis, pe[i] + qe[j])] += p.coeffs[i] * q.coeffs[j]
    return Polynomial(target_basis, out)


def evaluate(p: Polynomial, points):
    """Evaluate at one point (returns float) or at a ``(k, d)`` array of points."""
    pts = np.asarray(points, dtype=float)
    scalar = pts.ndim == 0 or (pts.ndim == 1 and p.basis.d > 1)
    vals = p.basis.design_matrix(pts) @ p.coeffs
    return float(vals[0]) if scalar else vals
