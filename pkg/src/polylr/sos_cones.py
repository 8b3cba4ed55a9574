"""Sum-of-squares parameterizations of non-negative polynomials.

A polynomial of degree ``n`` is certified non-negative on a domain by writing
it as ``sum_k w_k(t) * tau_k(t)^T G_k tau_k(t)`` with every ``G_k`` positive
semidefinite and every weight ``w_k`` non-negative on the domain. The map from
Gram matrices to coefficients is linear; :class:`SelectionMaps` stores it both
as sparse trace matrices ``L_i`` and as a dense matrix acting on ``svec(G)``.

Univariate domains are exact (every non-negative polynomial has such a
representation); on ``R^d`` the representation is only sufficient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Union

import numpy as np

from .polybasis import Basis, Polynomial, build_basis, index_of

SQRT2 = math.sqrt(2.0)


class UnsupportedDegreeError(ValueError):
    pass


# -- domains ---------------------------------------------------------------


@dataclass(frozen=True)
class RealLine:
    d: int = 1


@dataclass(frozen=True)
class HalfLine:
    """``[a, inf)``."""

    a: float = 0.0
    d: int = 1


@dataclass(frozen=True)
class Interval:
    a: float
    b: float
    d: int = 1

    def __post_init__(self):
        if not self.a < self.b:
            raise ValueError(f"interval needs a < b, got [{self.a}, {self.b}]")


@dataclass(frozen=True)
class RealSpace:
    d: int


@dataclass(frozen=True, eq=False)
class Support:
    """Finite support: non-negativity is required only at these points."""

    points: np.ndarray

    def __post_init__(self):
        p = np.array(self.points, dtype=float)
        if p.ndim == 1:
            p = p.reshape(-1, 1)
        p = np.unique(p, axis=0)
        p.setflags(write=False)
        object.__setattr__(self, "points", p)

    @property
    def d(self) -> int:
        return self.points.shape[1]


Domain = Union[RealLine, HalfLine, Interval, RealSpace, Support]


def domain_to_json(dom: Domain) -> dict:
    if isinstance(dom, RealLine):
        return {"type": "R"}
    if isinstance(dom, HalfLine):
        return {"type": "Rplus", "a": dom.a}
    if isinstance(dom, Interval):
        return {"type": "interval", "a": dom.a, "b": dom.b}
    if isinstance(dom, RealSpace):
        return {"type": "Rd", "d": dom.d}
    return {"type": "support", "points": dom.points.tolist()}


def domain_from_json(obj: dict) -> Domain:
    kind = obj.get("type")
    if kind == "R":
        return RealLine()
    if kind == "Rplus":
        return HalfLine(float(obj.get("a", 0.0)))
    if kind == "interval":
        if "a" not in obj or "b" not in obj:
            raise ValueError("interval domain needs fields 'a' and 'b'")
        return Interval(float(obj["a"]), float(obj["b"]))
    if kind == "Rd":
        if "d" not in obj:
            raise ValueError("Rd domain needs field 'd'")
        return RealSpace(int(obj["d"]))
    if kind == "support":
        return Support(obj["points"])
    raise ValueError(f"unknown domain type {kind!r}")


# -- structures ------------------------------------------------------------


class Block(NamedTuple):
    weight: Polynomial
    gram_size: int
    gram_basis: Basis


@dataclass(frozen=True, eq=False)
class SosStructure:
    domain: Domain
    degree: int
    blocks: tuple[Block, ...]

    @property
    def d(self) -> int:
        return self.blocks[0].gram_basis.d

    @property
    def svec_sizes(self) -> list[int]:
        return [b.gram_size * (b.gram_size + 1) // 2 for b in self.blocks]


def _weight(basis: Basis, terms: dict) -> Polynomial:
    return Polynomial.from_terms(basis, terms)


def structure_for(domain: Domain, n: int) -> SosStructure:
    """Gram-block parameterization of the degree-``n`` non-negative polynomials."""
    if n < 0:
        raise ValueError("degree must be non-negative")
    if isinstance(domain, Support):
        raise TypeError("finite supports use pointwise constraints, not Gram blocks")
    d = domain.d
    wb = build_basis(d, n)
    one = Polynomial.constant(wb)
    m, odd = divmod(n, 2)
    if isinstance(domain, (RealLine, RealSpace)):
        if odd:
            raise UnsupportedDegreeError(
                f"a polynomial non-negative on R^{d} has even degree, got n={n}"
            )
        specs = [(one, m)]
    elif isinstance(domain, HalfLine):
        shift = _weight(wb, {0: -domain.a, 1: 1.0}) if n >= 1 else None
        specs = [(one, m), (shift, m if odd else m - 1)]
    elif isinstance(domain, Interval):
        a, b = domain.a, domain.b
        if odd:
            specs = [(_weight(wb, {0: b, 1: -1.0}), m), (_weight(wb, {0: -a, 1: 1.0}), m)]
        else:
            quad = _weight(wb, {0: -a * b, 1: a + b, 2: -1.0}) if n >= 2 else None
            specs = [(one, m), (quad, m - 1)]
    else:
        raise TypeError(f"unknown domain {domain!r}")
    blocks = tuple(
        Block(w, build_basis(d, g).size, build_basis(d, g)) for w, g in specs if g >= 0
    )
    return SosStructure(domain, n, blocks)


# -- trace map ---------------------------------------------------------------


def svec_index(size: int) -> list[tuple[int, int]]:
    return [(a, b) for a in range(size) for b in range(a, size)]


def svec(G: np.ndarray) -> np.ndarray:
    iu = np.triu_indices(G.shape[0])
    scale = np.where(iu[0] == iu[1], 1.0, SQRT2)
    return G[iu] * scale


def smat(v: np.ndarray, size: int) -> np.ndarray:
    iu = np.triu_indices(size)
    scale = np.where(iu[0] == iu[1], 1.0, 1.0 / SQRT2)
    G = np.zeros((size, size))
    G[iu] = v * scale
    return G + np.triu(G, 1).T


@dataclass(frozen=True, eq=False)
class SelectionMaps:
    """Linear map ``T`` from Gram blocks to coefficients.

    ``entries[i][k]`` lists ``(row, col, value)`` with ``row <= col``; the
    matrix ``L_i^(k)`` has ``value`` at both ``(row, col)`` and ``(col, row)``.
    ``dense`` is the same map acting on the concatenated ``svec`` of the blocks.
    """

    structure: SosStructure
    basis: Basis
    entries: tuple[tuple[tuple[tuple[int, int, float], ...], ...], ...]
    dense: np.ndarray

    def matrix(self, i: int, k: int) -> np.ndarray:
        size = self.structure.blocks[k].gram_size
        L = np.zeros((size, size))
        for a, b, v in self.entries[i][k]:
            L[a, b] = v
            L[b, a] = v
        return L

    def block_slices(self) -> list[slice]:
        out, start = [], 0
        for s in self.structure.svec_sizes:
            out.append(slice(start, start + s))
            start += s
        return out

    def adjoint(self, nu: np.ndarray) -> list[np.ndarray]:
        """``sum_i nu_i L_i^(k)`` for every block."""
        v = self.dense.T @ np.asarray(nu, dtype=float)
        return [
            smat(v[sl], blk.gram_size)
            for sl, blk in zip(self.block_slices(), self.structure.blocks)
        ]


def selection_maps(s: SosStructure, basis: Basis) -> SelectionMaps:
    if basis.n != s.degree or basis.d != s.d:
        raise ValueError(
            f"basis (d={basis.d}, n={basis.n}) does not match structure "
            f"(d={s.d}, n={s.degree})"
        )
    per_coeff: list[list[dict]] = [[{} for _ in s.blocks] for _ in range(basis.size)]
    dense = np.zeros((basis.size, sum(s.svec_sizes)))
    offset = 0
    for k, blk in enumerate(s.blocks):
        gexp = blk.gram_basis.exponents
        wexp = blk.weight.basis.exponents
        wnz = np.flatnonzero(blk.weight.coeffs)
        for col, (a, b) in enumerate(svec_index(blk.gram_size)):
            for g in wnz:
                i = index_of(basis, gexp[a] + gexp[b] + wexp[g])
                w = blk.weight.coeffs[g]
                cell = per_coeff[i][k]
                cell[(a, b)] = cell.get((a, b), 0.0) + w
                dense[i, offset + col] += w if a == b else SQRT2 * w
        offset += s.svec_sizes[k]
    entries = tuple(
        tuple(tuple((a, b, v) for (a, b), v in sorted(cell.items())) for cell in row)
        for row in per_coeff
    )
    dense.setflags(write=False)
    return SelectionMaps(s, basis, entries, dense)


def _check_grams(maps: SelectionMaps, grams) -> list[np.ndarray]:
    blocks = maps.structure.blocks
    if len(grams) != len(blocks):
        raise ValueError(f"{len(grams)} Gram matrices for {len(blocks)} blocks")
    out = []
    for G, blk in zip(grams, blocks):
        G = np.asarray(G, dtype=float)
        if G.shape != (blk.gram_size, blk.gram_size):
            raise ValueError(f"Gram matrix shape {G.shape}, expected {blk.gram_size}")
        out.append(0.5 * (G + G.T))
    return out


def assemble_coeffs(maps: SelectionMaps, grams) -> np.ndarray:
    """``x_i = sum_k trace(L_i^(k) G_k)``."""
    grams = _check_grams(maps, grams)
    return maps.dense @ np.concatenate([svec(G) for G in grams])


class CertificateReport(NamedTuple):
    passed: bool
    match_residual: float
    min_eigenvalue: float
    match_ok: bool
    psd_ok: bool


def certificate_check(x, grams, maps: SelectionMaps, psd_tol: float = 1e-9,
                      match_tol: float = 1e-8) -> CertificateReport:
    """Check ``x == T(G)`` and ``G_k >= 0``; failures are reported, not raised."""
    grams = _check_grams(maps, grams)
    resid = float(np.max(np.abs(np.asarray(x, dtype=float) - assemble_coeffs(maps, grams))))
    min_eig = min(float(np.linalg.eigvalsh(G)[0]) for G in grams) if grams else 0.0
    match_ok = resid <= match_tol
    psd_ok = min_eig >= -psd_tol
    return CertificateReport(match_ok and psd_ok, resid, min_eig, match_ok, psd_ok)
