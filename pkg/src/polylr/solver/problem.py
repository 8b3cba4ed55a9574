"""The minimum-norm conic program, its dual, and KKT recovery.

Primal::

    minimize    1/2 x'Hx
    subject to  S H x = c,  U H x <= d,  x = T(G),  G >= 0,  x'Hx <= C

Dual variables are ``eta`` (equalities), ``nu`` (the cone coupling
``x = T(G)``) and ``eps >= 0`` (inequalities). At the optimum
``x = S'eta + H^{-1} nu - U'eps`` and ``sum_i nu_i L_i`` is PSD.

Instead of Gram blocks the positivity constraint may be imposed pointwise on
a finite support: ``V x >= 0`` where ``V`` is the design matrix of the points.
The dual is then ``nu = V'w`` with ``w >= 0``.
"""

from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
from scipy import linalg

from ..moments import MomentMatrix, check_pd
from ..polybasis import Basis, build_basis, index_of
from ..sos_cones import (
    HalfLine,
    Interval,
    SelectionMaps,
    SosStructure,
    Support,
    certificate_check,
    domain_from_json,
    domain_to_json,
    selection_maps,
    smat,
    structure_for,
    svec,
)
from . import ipm
from .cones import NonnegCone, PSDCone, SOCone, ZeroCone

DEFAULT_C = 1e6
TOL = 1e-8
GAP_TOL = 1e-7


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    MAX_ITERATIONS = "MaxIterations"
    NUMERICAL_FAILURE = "NumericalFailure"


def _matrix(a, cols: int) -> np.ndarray:
    if a is None:
        return np.zeros((0, cols))
    a = np.array(a, dtype=float)
    if a.size == 0:
        return np.zeros((0, cols))
    return np.atleast_2d(a)


def _vector(a) -> np.ndarray:
    if a is None:
        return np.zeros(0)
    return np.array(a, dtype=float).reshape(-1)


@dataclass(frozen=True, eq=False)
class ConicProblem:
    """Data of the primal program.

    ``H`` may be a :class:`MomentMatrix` or a plain array. Positivity is given
    either by ``sos``/``maps`` (Gram blocks) or by ``support`` (design matrix
    of finitely many points). With neither, the program is a plain QP.
    """

    H: MomentMatrix | np.ndarray
    S: np.ndarray
    c: np.ndarray
    U: np.ndarray | None = None
    d: np.ndarray | None = None
    sos: SosStructure | None = None
    maps: SelectionMaps | None = None
    C: float = DEFAULT_C
    support: np.ndarray | None = None

    def __post_init__(self):
        H = self.H.entries if isinstance(self.H, MomentMatrix) else np.array(self.H, float)
        N1 = H.shape[0]
        if H.shape != (N1, N1) or not np.allclose(H, H.T, rtol=1e-12, atol=0):
            raise ValueError("H must be a symmetric square matrix")
        S, U = _matrix(self.S, N1), _matrix(self.U, N1)
        c, d = _vector(self.c), _vector(self.d)
        if S.shape[1] != N1 or U.shape[1] != N1:
            raise ValueError(f"S and U need {N1} columns")
        if c.size != S.shape[0] or d.size != U.shape[0]:
            raise ValueError("c and d must match the rows of S and U")
        rows = S.shape[0] + U.shape[0]
        if rows > N1:
            raise ValueError(f"{rows} constraints exceed the {N1} coefficients")
        if rows and np.linalg.matrix_rank(np.vstack([S, U])) < rows:
            raise ValueError("constraint polynomials must be linearly independent")
        if np.any(np.diag(H) <= 0) or not check_pd(_equilibrate(H), tol=1e-13).is_pd:
            raise ValueError("H must be positive definite")
        if self.sos is not None and self.maps is None:
            object.__setattr__(self, "maps", selection_maps(self.sos, _basis_for(N1, self.sos)))
        if self.maps is not None and self.maps.dense.shape[0] != N1:
            raise ValueError("selection maps do not match the size of H")
        if self.sos is not None and self.support is not None:
            raise ValueError("give either Gram blocks or a finite support, not both")
        V = None if self.support is None else _matrix(self.support, N1)
        if not self.C > 0:
            raise ValueError("the nuisance bound C must be positive")
        for name, v in (("H", H), ("S", S), ("c", c), ("U", U), ("d", d), ("support", V)):
            if v is not None:
                v.setflags(write=False)
                object.__setattr__(self, name, v)

    @property
    def size(self) -> int:
        return self.H.shape[0]

    @property
    def n_pos(self) -> int:
        if self.maps is not None:
            return self.maps.dense.shape[1]
        return 0 if self.support is None else self.support.shape[0]

    # -- JSON ----------------------------------------------------------------

    def to_json(self) -> dict:
        out = {
            "H": self.H.tolist(),
            "S": self.S.tolist(),
            "c": self.c.tolist(),
            "U": self.U.tolist(),
            "d": self.d.tolist(),
            "C": float(self.C),
        }
        if self.sos is not None:
            out["domain"] = domain_to_json(self.sos.domain)
            out["n"] = self.sos.degree
        if self.support is not None:
            out["support"] = self.support.tolist()
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "ConicProblem":
        for key in ("H", "S", "c"):
            if key not in obj:
                raise ValueError(f"problem JSON is missing field '{key}'")
        H = np.array(obj["H"], dtype=float)
        kw = dict(U=obj.get("U"), d=obj.get("d"), C=float(obj.get("C", DEFAULT_C)))
        if obj.get("support") is not None:
            kw["support"] = np.array(obj["support"], dtype=float)
        elif "domain" in obj:
            dom = domain_from_json(obj["domain"])
            n = int(obj["n"]) if "n" in obj else _degree_for(H.shape[0], dom.d)
            basis = build_basis(dom.d, n)
            if basis.size != H.shape[0]:
                raise ValueError(f"n={n} does not match H of size {H.shape[0]}")
            if isinstance(dom, Support):
                kw["support"] = basis.design_matrix(dom.points)
            else:
                s = structure_for(dom, n)
                kw["sos"], kw["maps"] = s, selection_maps(s, basis)
        return cls(H, obj["S"], obj["c"], **kw)


def _equilibrate(H: np.ndarray) -> np.ndarray:
    """``D H D`` with unit diagonal; moment matrices are badly scaled otherwise."""
    dx = 1.0 / np.sqrt(np.abs(np.diag(H)))
    return H * np.outer(dx, dx)


def _degree_for(size: int, d: int) -> int:
    n = 0
    while build_basis(d, n).size < size:
        n += 1
    if build_basis(d, n).size != size:
        raise ValueError(f"no degree gives a basis of size {size} in dimension {d}")
    return n


def _basis_for(size: int, s: SosStructure) -> Basis:
    b = build_basis(s.d, s.degree)
    if b.size != size:
        raise ValueError("SOS structure degree does not match H")
    return b


@dataclass(frozen=True, eq=False)
class Solution:
    x: np.ndarray
    grams: list
    eta: np.ndarray
    nu: np.ndarray
    eps: np.ndarray
    objective: float
    gap: float
    kkt_residuals: dict
    status: Status
    iterations: int = 0
    support_duals: np.ndarray | None = None
    nuisance_slack: float = math.inf
    nuisance_multiplier: float = 0.0
    tolerance: float = TOL

    @property
    def ok(self) -> bool:
        return self.status is Status.OPTIMAL

    @property
    def nuisance_active(self) -> bool:
        return self.nuisance_slack <= 1e-6

    def to_json(self) -> dict:
        return {
            "status": self.status.value,
            "x": self.x.tolist(),
            "eta": self.eta.tolist(),
            "nu": self.nu.tolist(),
            "eps": self.eps.tolist(),
            "objective": float(self.objective),
            "gap": float(self.gap),
            "iterations": int(self.iterations),
            "grams": [np.asarray(G).tolist() for G in self.grams],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Solution":
        for key in ("status", "x"):
            if key not in obj:
                raise ValueError(f"solution JSON is missing field '{key}'")
        try:
            status = Status(obj["status"])
        except ValueError:
            raise ValueError(f"unknown solution status {obj['status']!r}") from None
        x = _vector(obj["x"])
        vec = lambda k: _vector(obj[k]) if obj.get(k) is not None else np.zeros(0)
        return cls(
            x=x, grams=[np.array(G, dtype=float) for G in obj.get("grams", [])],
            eta=vec("eta"), nu=vec("nu") if obj.get("nu") is not None else np.zeros(x.size),
            eps=vec("eps"), objective=float(obj.get("objective", math.nan)),
            gap=float(obj.get("gap", math.nan)), kkt_residuals={}, status=status,
            iterations=int(obj.get("iterations", 0)),
        )


def _empty_solution(p: ConicProblem, status: Status, iterations: int) -> Solution:
    nan = np.full(p.size, np.nan)
    return Solution(
        x=nan, grams=[], eta=np.full(p.S.shape[0], np.nan), nu=nan.copy(),
        eps=np.full(p.U.shape[0], np.nan), objective=math.nan, gap=math.nan,
        kkt_residuals={}, status=status, iterations=iterations,
    )


# -- scaling -------------------------------------------------------------------


def _gram_diag(p: ConicProblem, Dx: np.ndarray) -> list[np.ndarray]:
    """Diagonal congruence ``G = E G' E`` per block that balances the Gram entries."""
    out = []
    basis = p.maps.basis
    for blk in p.sos.blocks:
        wexp = blk.weight.basis.exponents
        nz = np.flatnonzero(blk.weight.coeffs)
        top = wexp[nz[np.argmax(wexp[nz].sum(axis=1))]]
        out.append(np.array([math.sqrt(Dx[index_of(basis, 2 * g + top)])
                             for g in blk.gram_basis.exponents]))
    return out


def _gram_scale(p: ConicProblem, Dx: np.ndarray) -> np.ndarray:
    """Per-entry scale of ``svec(G)`` under the balancing congruence."""
    out = []
    for e in _gram_diag(p, Dx):
        iu = np.triu_indices(e.size)
        out.append(e[iu[0]] * e[iu[1]])
    return np.concatenate(out) if out else np.zeros(0)


def _row_scale(M: np.ndarray) -> np.ndarray:
    if M.shape[0] == 0:
        return np.zeros(0)
    r = np.max(np.abs(M), axis=1)
    return 1.0 / np.where(r > 0, r, 1.0)


def _h_solve(H: np.ndarray, v: np.ndarray) -> np.ndarray:
    """``H^{-1} v`` via the equilibrated Cholesky factor plus refinement.

    Residuals are formed in extended precision; moment matrices are too badly
    conditioned for a plain solve to give a usable duality gap.
    """
    Dx = 1.0 / np.sqrt(np.diag(H))
    cf = linalg.cho_factor(H * np.outer(Dx, Dx))
    v = np.asarray(v, dtype=float)
    if v.ndim == 2:
        Dx = Dx[:, None]
    y = Dx * linalg.cho_solve(cf, Dx * v)
    Hl = H.astype(np.longdouble)
    for _ in range(3):
        r = (v.astype(np.longdouble) - Hl @ y.astype(np.longdouble)).astype(float)
        y = y + Dx * linalg.cho_solve(cf, Dx * r)
    return y


def _h_inverse(H: np.ndarray) -> np.ndarray:
    return _h_solve(H, np.eye(H.shape[0]))


# -- solvers -------------------------------------------------------------------


class SolverAdapter(Protocol):
    """Anything that can solve a :class:`ConicProblem`."""

    def solve(self, problem: ConicProblem) -> Solution: ...


@dataclass(frozen=True, eq=False)
class _Scaled:
    """Equilibrated data: ``x = Dx * y`` and ``svec(G) = gs * g``."""

    Dx: np.ndarray
    Hs: np.ndarray
    SH: np.ndarray
    UH: np.ndarray
    T: np.ndarray | None
    gs: np.ndarray | None
    V: np.ndarray | None

    @classmethod
    def build(cls, p: ConicProblem) -> "_Scaled":
        H = p.H
        Dx = 1.0 / np.sqrt(np.diag(H))
        T = gs = V = None
        if p.maps is not None:
            gs = _gram_scale(p, Dx)
            T = (p.maps.dense / Dx[:, None]) * gs[None, :]
        if p.support is not None:
            V = p.support * Dx
        return cls(Dx, H * np.outer(Dx, Dx), p.S @ H * Dx, p.U @ H * Dx, T, gs, V)


@dataclass
class _Point:
    """A candidate primal-dual point in scaled coordinates."""

    y: np.ndarray
    g: np.ndarray
    eta: np.ndarray
    nu: np.ndarray
    eps: np.ndarray
    w: np.ndarray


@dataclass(frozen=True)
class EmbeddedSolver:
    """The built-in interior-point method (dense, single-threaded).

    The interior-point iterate is refined by a polishing step: Gram ranks and
    active inequalities are read off the iterate, the KKT conditions on that
    face are solved as a linear system, and the result is kept only if it
    passes the primal and dual cone checks.
    """

    settings: ipm.Settings = field(default_factory=ipm.Settings)
    polish: bool = True

    def solve(self, p: ConicProblem) -> Solution:
        sol = self._solve(p)
        if sol.status in (Status.NUMERICAL_FAILURE, Status.MAX_ITERATIONS) and math.isfinite(p.C):
            # the bound caps the objective itself, so it can be applied after the fact
            free = self._solve(dataclasses.replace(p, C=math.inf))
            if free.status is Status.OPTIMAL:
                val = float(free.x @ p.H @ free.x)
                if val > p.C * (1.0 + 1e-12):
                    return _empty_solution(p, Status.INFEASIBLE, free.iterations)
                root = math.sqrt(p.C)
                return dataclasses.replace(
                    free, nuisance_slack=(root - math.sqrt(val)) / root)
        return sol

    def _solve(self, p: ConicProblem) -> Solution:
        sc = _Scaled.build(p)
        N1 = p.size
        r_eq, r_in = _row_scale(sc.SH), _row_scale(sc.UH)
        m_eq, m_in = sc.SH.shape[0], sc.UH.shape[0]
        sos = sc.T is not None
        ng = sc.T.shape[1] if sos else 0
        nv = N1 + ng
        blocks_A, blocks_b, cones = [], [], []

        def add(Arow, brow, cone):
            blocks_A.append(Arow)
            blocks_b.append(brow)
            cones.append(cone)

        zero_rows = m_eq + (N1 if sos else 0)
        Aeq = np.zeros((zero_rows, nv))
        beq = np.zeros(zero_rows)
        Aeq[:m_eq, :N1] = sc.SH * r_eq[:, None]
        beq[:m_eq] = p.c * r_eq
        if sos:
            Aeq[m_eq:, :N1] = np.eye(N1)
            Aeq[m_eq:, N1:] = -sc.T
        if zero_rows:
            add(Aeq, beq, ZeroCone(zero_rows))

        n_sup = 0 if sc.V is None else sc.V.shape[0]
        r_sup = _row_scale(sc.V) if n_sup else np.zeros(0)
        if m_in or n_sup:
            Ain = np.zeros((m_in + n_sup, nv))
            Ain[:m_in, :N1] = sc.UH * r_in[:, None]
            if n_sup:
                Ain[m_in:, :N1] = -sc.V * r_sup[:, None]
            add(Ain, np.concatenate([p.d * r_in, np.zeros(n_sup)]), NonnegCone(m_in + n_sup))

        has_soc = math.isfinite(p.C)
        L = np.linalg.cholesky(sc.Hs)
        if has_soc:
            Asoc = np.zeros((N1 + 1, nv))
            Asoc[1:, :N1] = -L.T
            bsoc = np.zeros(N1 + 1)
            bsoc[0] = math.sqrt(p.C)
            add(Asoc, bsoc, SOCone(N1 + 1))

        if sos:
            start = N1
            for blk, size in zip(p.sos.blocks, p.sos.svec_sizes):
                Ap = np.zeros((size, nv))
                Ap[:, start:start + size] = -np.eye(size)
                add(Ap, np.zeros(size), PSDCone(blk.gram_size))
                start += size

        A = np.vstack(blocks_A) if blocks_A else np.zeros((0, nv))
        b = np.concatenate(blocks_b) if blocks_b else np.zeros(0)
        P = np.zeros((nv, nv))
        P[:N1, :N1] = sc.Hs
        with np.errstate(all="ignore"):
            res = ipm.solve(P, np.zeros(nv), A, b, cones, self.settings)

        status = Status(res.status)
        if status is Status.INFEASIBLE or not np.isfinite(res.x).all():
            return _empty_solution(p, status, res.iterations)

        v, z = res.x, res.z
        off = zero_rows
        point = _Point(
            y=v[:N1], g=v[N1:], eta=-r_eq * z[:m_eq],
            nu=-z[m_eq:zero_rows] if sos else np.zeros(N1),
            eps=r_in * z[off:off + m_in],
            w=r_sup * z[off + m_in:off + m_in + n_sup],
        )
        soc_z = z[off + m_in + n_sup:off + m_in + n_sup + N1 + 1] if has_soc else None

        near = max(res.primal_residual, res.dual_residual) <= 1e-4
        if self.polish and (status is Status.OPTIMAL or near):
            soc_active = has_soc and (
                math.sqrt(p.C) - float(np.linalg.norm(L.T @ point.y))) <= 1e-6 * math.sqrt(p.C)
            if not soc_active:
                polished = _polish(p, sc, point, v, z, A.shape[0] - ng, cones)
                if polished is not None:
                    point = polished
                    status = Status.OPTIMAL
                    soc_z = None
        if status is not Status.OPTIMAL:
            return _empty_solution(p, status, res.iterations)

        if sos:
            point = _clip_grams(p, sc, point)
        x = sc.Dx * point.y
        nu = point.nu / sc.Dx if sos else (p.support.T @ point.w if n_sup else np.zeros(N1))
        grams = []
        if sos:
            grams = [smat(g, blk.gram_size) for g, blk in
                     zip(np.split(point.g * sc.gs, np.cumsum(p.sos.svec_sizes)[:-1]),
                         p.sos.blocks)]
        slack, mult = math.inf, 0.0
        if has_soc:
            root = math.sqrt(p.C)
            slack = (root - float(np.linalg.norm(L.T @ point.y))) / root
            mult = 0.0 if soc_z is None else float(soc_z[0]) / (2.0 * root)
        sol = Solution(
            x=x, grams=grams, eta=point.eta, nu=nu, eps=point.eps,
            objective=0.5 * float(x @ p.H @ x), gap=0.0, kkt_residuals={},
            status=status, iterations=res.iterations,
            support_duals=point.w if n_sup else None,
            nuisance_slack=slack, nuisance_multiplier=mult,
        )
        gap = duality_gap(p, sol, (sol.eta, sol.nu, sol.eps))
        resid = kkt_residuals(p, sol)
        return Solution(**{**sol.__dict__, "gap": gap, "kkt_residuals": resid})


POLISH_TOL = 1e-9


def _clip_grams(p: ConicProblem, sc: _Scaled, pt: _Point) -> _Point:
    """Project the Grams onto the PSD cone and rebuild ``x = T(G)``.

    Makes the returned polynomial an exact s.o.s. combination, so no grid
    point can see a round-off negative eigenvalue. Skipped if the move is
    not negligible.
    """
    parts = []
    for gg, blk in zip(np.split(pt.g, np.cumsum(p.sos.svec_sizes)[:-1]), p.sos.blocks):
        lam, Q = np.linalg.eigh(smat(gg, blk.gram_size))
        parts.append(svec((Q * np.maximum(lam, 0.0)) @ Q.T))
    g = np.concatenate(parts)
    y = sc.T @ g
    r_eq = _row_scale(sc.SH)
    before = float(np.max(np.abs(r_eq * (sc.SH @ pt.y - p.c)), initial=0.0))
    after = float(np.max(np.abs(r_eq * (sc.SH @ y - p.c)), initial=0.0))
    if after > max(2.0 * before, 1e-12):
        return pt
    return _Point(y=y, g=g, eta=pt.eta, nu=pt.nu, eps=pt.eps, w=pt.w)


def _face_candidates(G: np.ndarray, Z: np.ndarray):
    """Orthonormal bases of candidate faces of the PSD cone containing ``G``."""
    lam, Q = np.linalg.eigh(G)
    zq = np.einsum("ij,jk,ki->i", Q.T, Z, Q)
    top = max(float(lam[-1]), 1e-300)
    masks = [lam > zq]
    for rel in (1e-6, 1e-9, 1e-4, 1e-3):
        masks.append(lam > rel * top)
    seen, out = set(), []
    for mk in masks:
        key = tuple(mk)
        if key not in seen:
            seen.add(key)
            out.append(Q[:, mk])
    return out


def _svec_basis(Q: np.ndarray) -> np.ndarray:
    """Matrix mapping ``svec(M)`` to ``svec(Q M Q')``."""
    n, r = Q.shape
    cols = []
    for a, bb in zip(*np.triu_indices(r)):
        E = np.zeros((r, r))
        if a == bb:
            E[a, a] = 1.0
        else:
            E[a, bb] = E[bb, a] = 1.0 / math.sqrt(2.0)
        cols.append(svec(Q @ E @ Q.T))
    return np.array(cols).T if cols else np.zeros((n * (n + 1) // 2, 0))


def _polish(p: ConicProblem, sc: _Scaled, pt: _Point, v, z, _unused, cones):
    """Solve the KKT system on the face identified by an interior-point iterate."""
    N1 = p.size
    sos = sc.T is not None
    blocks = p.sos.blocks if sos else ()
    sizes = p.sos.svec_sizes if sos else []
    g_parts = np.split(pt.g, np.cumsum(sizes)[:-1]) if sos else []
    z_psd = sc.T.T @ pt.nu if sos else np.zeros(0)
    z_parts = np.split(z_psd, np.cumsum(sizes)[:-1]) if sos else []
    face_opts = [
        _face_candidates(smat(g, blk.gram_size), smat(zz, blk.gram_size))
        for g, zz, blk in zip(g_parts, z_parts, blocks)
    ]
    in_slack = p.d - sc.UH @ pt.y
    act_in = [pt.eps > in_slack, pt.eps > 1e-6 * max(1.0, float(np.max(pt.eps, initial=0)))]
    if sc.V is not None:
        vy = sc.V @ pt.y
        act_sup = [pt.w > vy, vy < 1e-8 * max(1.0, float(np.max(np.abs(vy))))]
    else:
        act_sup = [np.zeros(0, dtype=bool)]

    n_try = max([1] + [len(f) for f in face_opts])
    combos = [([f[min(k, len(f) - 1)] for f in face_opts], ai, asup)
              for k in range(n_try) for ai in act_in for asup in act_sup]
    for faces, ai, asup in combos:
        cand = _solve_face(p, sc, pt, faces, ai, asup)
        if cand is not None:
            if sos:
                better = _factor_refine(p, sc, cand, ai)
                if better is not None:
                    return better
            return cand
    for faces, ai, asup in combos:
        cand = _restore_primal(p, sc, pt, faces, ai, asup)
        if cand is not None:
            if sos:
                better = _factor_refine(p, sc, cand, ai)
                if better is not None:
                    return better
            return cand
    return None


def _factor_refine(p, sc: _Scaled, pt: _Point, act_in, iters: int = 8):
    """Newton steps on ``G = L L'`` with the Gram ranks held fixed.

    A face read off an interior iterate is only accurate to about the square
    root of the iterate's gap; solving ``Z L = 0`` together with the linear
    constraints removes that error at quadratic speed.
    """
    sizes = p.sos.svec_sizes
    blocks = p.sos.blocks
    splits = np.cumsum(sizes)[:-1]
    zs = [smat(zz, blk.gram_size) for zz, blk in zip(np.split(sc.T.T @ pt.nu, splits), blocks)]
    # two guesses at the face: a direction is dropped when the dual slack
    # outweighs the Gram there (complementarity), or when it is numerically zero
    tried = set()
    for by_dual in (True, False):
        Ls = []
        for gg, blk, Zk in zip(np.split(pt.g, splits), blocks, zs):
            lam, V = np.linalg.eigh(smat(gg, blk.gram_size))
            top = max(float(lam[-1]), 1e-300)
            keep = lam > 1e-10 * top
            if by_dual:
                zd = np.einsum("ij,jk,ki->i", V.T, Zk, V)
                zmax = float(np.max(np.abs(Zk), initial=0.0))
                if zmax > 0:
                    keep &= lam / top > zd / zmax
            Ls.append(V[:, keep] * np.sqrt(lam[keep]))
        ranks = tuple(L.shape[1] for L in Ls)
        if ranks in tried or all(L.shape[1] == L.shape[0] for L in Ls):
            continue
        tried.add(ranks)
        out = _refine_ranks(p, sc, pt, act_in, Ls, iters)
        if out is not None:
            return out
    return None


def _refine_ranks(p, sc: _Scaled, pt: _Point, act_in, Ls, iters: int):
    sizes = p.sos.svec_sizes
    blocks = p.sos.blocks
    SH, UA = sc.SH, sc.UH[act_in]
    rows = np.vstack([SH, UA])
    target = np.concatenate([p.c, p.d[act_in]])
    me = SH.shape[0]
    shapes = [L.shape for L in Ls]
    nL = sum(a * b for a, b in shapes)

    def unpack_L(vec):
        out, k = [], 0
        for a, b in shapes:
            out.append(vec[k:k + a * b].reshape(a, b))
            k += a * b
        return out

    def gram_vec(Lb, Lc=None):
        """svec of ``Lb Lc' + Lc Lb'`` (or ``Lb Lb'``) per block."""
        parts = []
        for i, L in enumerate(Lb):
            M = L @ L.T if Lc is None else L @ Lc[i].T + Lc[i] @ L.T
            parts.append(svec(M))
        return np.concatenate(parts)

    def z_blocks(nu):
        return [smat(zz, blk.gram_size) for zz, blk in
                zip(np.split(sc.T.T @ nu, np.cumsum(sizes)[:-1]), blocks)]

    def residual(Lb, lam):
        y = sc.T @ gram_vec(Lb)
        nu = sc.Hs @ y - rows.T @ (np.concatenate([np.ones(me), -np.ones(UA.shape[0])]) * lam)
        Z = z_blocks(nu)
        r1 = np.concatenate([(Zk @ Lk).ravel() for Zk, Lk in zip(Z, Lb)])
        return np.concatenate([r1, rows @ y - target]), y, nu, Z

    lam = np.concatenate([pt.eta, pt.eps[act_in]])
    sign = np.concatenate([np.ones(me), -np.ones(UA.shape[0])])
    Lb = Ls
    r, y, nu, Z = residual(Lb, lam)
    r0 = float(np.linalg.norm(r))
    n_unk = nL + lam.size
    for _ in range(iters):
        J = np.zeros((r.size, n_unk))
        for j in range(n_unk):
            if j < nL:
                e = np.zeros(nL)
                e[j] = 1.0
                dL = unpack_L(e)
                dy = sc.T @ gram_vec(Lb, dL)
                dnu = sc.Hs @ dy
                dZ = z_blocks(dnu)
                J[:, j] = np.concatenate([
                    np.concatenate([(dZk @ Lk + Zk @ dLk).ravel()
                                    for dZk, Lk, Zk, dLk in zip(dZ, Lb, Z, dL)]),
                    rows @ dy])
            else:
                e = np.zeros(lam.size)
                e[j - nL] = 1.0
                dZ = z_blocks(-rows.T @ (sign * e))
                J[:, j] = np.concatenate([
                    np.concatenate([(dZk @ Lk).ravel() for dZk, Lk in zip(dZ, Lb)]),
                    np.zeros(rows.shape[0])])
        step = linalg.lstsq(J, -r, cond=1e-13)[0]
        Lb = [L + dL for L, dL in zip(Lb, unpack_L(step[:nL]))]
        lam = lam + step[nL:]
        r, y, nu, Z = residual(Lb, lam)
        if float(np.max(np.abs(step))) <= 1e-15 * max(1.0, float(np.max(np.abs(y)))):
            break
    if not np.isfinite(r).all() or not float(np.linalg.norm(r)) <= r0:
        return None
    # only a converged Newton solve sits on the face; a stalled one means a wrong rank
    scale = max(1.0, float(np.max(np.abs(target), initial=0.0)), float(np.max(np.abs(y))))
    if float(np.max(np.abs(r))) > 1e-11 * scale * max(1.0, float(np.max(np.abs(nu)))):
        return None
    tol = POLISH_TOL
    eps = np.zeros(p.U.shape[0])
    eps[act_in] = lam[me:]
    if eps.size and eps.min() < -tol * max(1.0, np.abs(eps).max()):
        return None
    if np.any(sc.UH @ y - p.d > tol * (1.0 + np.abs(p.d))):
        return None
    for Zk in Z:
        if np.linalg.eigvalsh(Zk)[0] < -tol * max(1.0, np.abs(Zk).max()):
            return None
    # a refinement, not a jump to another point
    if float(np.max(np.abs(y - pt.y))) > 1e-4 * max(1.0, float(np.max(np.abs(pt.y)))):
        return None
    return _Point(y=y, g=gram_vec(Lb), eta=lam[:me], nu=nu, eps=eps, w=pt.w)


def _row_floor(M, r, u0):
    """Row magnitudes for scaling a face system: the target, or a floor for zero targets."""
    floor = np.max(np.abs(M), axis=1) * max(float(np.max(np.abs(u0), initial=0.0)), 1.0) * 1e-8
    return np.maximum(np.maximum(np.abs(r), floor), 1e-300)


def _residual_ok(M, u, r) -> bool:
    """Rows hold to ``1e-11`` of their target, or to round-off for zero targets."""
    res = np.abs(M @ u - r)
    absM = np.abs(M)
    umax = float(np.max(np.abs(u), initial=0.0))
    bound = 1e-11 * np.abs(r) + 1e-13 * (absM @ np.abs(u)) + 1e-15 * absM.max(axis=1) * umax
    return bool(np.all(res <= bound))


def _restore_primal(p, sc: _Scaled, pt: _Point, faces, act_in, act_sup):
    """Make the linear constraints hold exactly by a small move inside the face.

    The dual iterate is kept; only the primal point changes.
    """
    N1 = p.size
    sos = sc.T is not None
    if sos:
        Bfull = linalg.block_diag(*[_svec_basis(Q) for Q in faces])
        Y = sc.T @ Bfull
        # start from the iterate's compression onto the face, clipped to PSD
        m0 = []
        for Q, gg, blk in zip(faces, np.split(pt.g, np.cumsum(p.sos.svec_sizes)[:-1]),
                              p.sos.blocks):
            lam, V = np.linalg.eigh(Q.T @ smat(gg, blk.gram_size) @ Q)
            m0.append(svec((V * np.maximum(lam, 0.0)) @ V.T))
        g_face = Bfull @ np.concatenate(m0) if m0 else pt.g
        y0 = sc.T @ g_face
    else:
        Y = np.eye(N1)
        y0 = pt.y
    rows = [sc.SH, sc.UH[act_in]]
    rhs = [p.c, p.d[act_in]]
    if sc.V is not None:
        rows.append(sc.V[act_sup])
        rhs.append(np.zeros(int(act_sup.sum())))
    M = np.vstack(rows)
    if M.shape[0] == 0:
        return None
    target = np.concatenate(rhs)
    rs = 1.0 / _row_floor(M, target, y0)
    M, target = M * rs[:, None], target * rs
    y = y0
    for _ in range(2):
        r = target - M @ y
        dm = linalg.lstsq(M @ Y, r, cond=1e-14)[0]
        y = y + Y @ dm
        if sos:
            g_acc = dm if _ == 0 else g_acc + dm
    if not _residual_ok(M, y, target):
        return None
    if sos:
        dm = g_acc
    tol = POLISH_TOL
    if np.any(sc.UH @ y - p.d > tol * (1.0 + np.abs(p.d))):
        return None
    if sc.V is not None and (sc.V @ y).min() < -tol * max(1.0, float(np.abs(y).max())):
        return None
    g = pt.g
    if sos:
        g = g_face + Bfull @ dm
        for gg, blk in zip(np.split(g, np.cumsum(p.sos.svec_sizes)[:-1]), p.sos.blocks):
            if _rel_min_eig(smat(gg, blk.gram_size)) < -tol:
                return None
    # the move must be a refinement, not a different point
    if float(np.max(np.abs(y - pt.y))) > 1e-5 * max(1.0, float(np.max(np.abs(pt.y)))):
        return None
    return _Point(y=y, g=g, eta=pt.eta, nu=pt.nu, eps=pt.eps, w=pt.w)


def _solve_face(p, sc: _Scaled, pt: _Point, faces, act_in, act_sup, shrink: int = 2):
    N1 = p.size
    sos = sc.T is not None
    Bs = [_svec_basis(Q) for Q in faces]
    nm = [B.shape[1] for B in Bs]
    if sos:
        Bfull = linalg.block_diag(*Bs) if Bs else np.zeros((0, 0))
        TB = sc.T @ Bfull
    else:
        Bfull = TB = np.zeros((N1, 0))
    SH, UA = sc.SH, sc.UH[act_in]
    VA = sc.V[act_sup] if sc.V is not None else np.zeros((0, N1))
    me, la, sa = SH.shape[0], UA.shape[0], VA.shape[0]
    mtot = sum(nm)
    nl = N1 if sos else 0
    # unknowns: y, m, nu, eta, eps_A, w_A
    sizes = [N1, mtot, nl, me, la, sa]
    off = np.concatenate([[0], np.cumsum(sizes)])
    nt = int(off[-1])
    rows = []
    rhs = []

    def row(blocks, r):
        R = np.zeros((r.size, nt))
        for j, Mj in blocks.items():
            R[:, off[j]:off[j + 1]] = Mj
        rows.append(R)
        rhs.append(r)

    stat = {0: sc.Hs, 3: -SH.T, 4: UA.T, 5: -VA.T}
    if sos:
        stat[2] = -np.eye(N1)
    row(stat, np.zeros(N1))
    if sos:
        row({2: TB.T}, np.zeros(mtot))
        row({0: np.eye(N1), 1: -TB}, np.zeros(N1))
    row({0: SH}, p.c.copy())
    row({0: UA}, p.d[act_in].copy())
    row({0: VA}, np.zeros(sa))
    M = np.vstack(rows)
    r = np.concatenate(rhs)
    # start from the projection of the iterate so the min-norm step stays close
    m0 = [Q.T @ smat(g, Q.shape[0]) @ Q for Q, g in
          zip(faces, np.split(pt.g, np.cumsum([Q.shape[0] * (Q.shape[0] + 1) // 2
                                               for Q in faces])[:-1]))] if sos else []
    u0 = np.concatenate([pt.y, np.concatenate([svec(m) for m in m0]) if m0 else np.zeros(0),
                         pt.nu if sos else np.zeros(0), pt.eta, pt.eps[act_in], pt.w[act_sup]])
    rs = 1.0 / _row_floor(M, r, u0)
    M, r = M * rs[:, None], r * rs
    u = u0
    for _ in range(2):
        u = u + linalg.lstsq(M, r - M @ u, cond=1e-14)[0]
    if not _residual_ok(M, u, r):
        return None
    y = u[:N1]
    tol = POLISH_TOL
    ymax = max(1.0, float(np.max(np.abs(y))))
    eps = np.zeros(p.U.shape[0])
    eps[act_in] = u[off[4]:off[5]]
    w = np.zeros(0 if sc.V is None else sc.V.shape[0])
    if sc.V is not None:
        w[act_sup] = u[off[5]:off[6]]
        if (sc.V @ y).min(initial=0.0) < -tol * ymax or w.min(initial=0.0) < -tol * max(1.0, np.abs(w).max(initial=0)):
            return None
    if np.any(sc.UH @ y - p.d > tol * (1.0 + np.abs(p.d))):
        return None
    if eps.size and eps.min() < -tol * max(1.0, np.abs(eps).max()):
        return None
    g = np.zeros(0)
    nu = np.zeros(N1)
    if sos:
        mv = np.split(u[off[1]:off[2]], np.cumsum(nm)[:-1])
        parts, smaller, negative = [], [], False
        for Q, mm in zip(faces, mv):
            r_ = Q.shape[1]
            Mk = smat(mm, r_) if r_ else np.zeros((0, 0))
            if r_:
                lam, V = np.linalg.eigh(Mk)
                if lam[0] < -tol * max(1.0, np.abs(Mk).max()):
                    return None
                keep = lam > 1e-12 * max(float(lam[-1]), 1e-300)
                negative |= not keep.all()
                smaller.append(Q @ V[:, keep])
            else:
                smaller.append(Q)
            parts.append(svec(Q @ Mk @ Q.T) if r_ else np.zeros(Q.shape[0] * (Q.shape[0] + 1) // 2))
        if negative and shrink:
            # the face was too large; the optimum sits on a smaller one
            tighter = _solve_face(p, sc, pt, smaller, act_in, act_sup, shrink - 1)
            if tighter is not None:
                return tighter
        g = np.concatenate(parts)
        nu = u[off[2]:off[3]]
        zs = np.split(sc.T.T @ nu, np.cumsum(p.sos.svec_sizes)[:-1])
        for zz, blk in zip(zs, p.sos.blocks):
            Z = smat(zz, blk.gram_size)
            if np.linalg.eigvalsh(Z)[0] < -tol * max(1.0, np.abs(Z).max()):
                return None
    return _Point(y=y, g=g, eta=u[off[3]:off[4]], nu=nu, eps=eps, w=w)


def _min_on_domain(x: np.ndarray, dom) -> float:
    """Minimum of a univariate polynomial (increasing powers) on a domain."""
    poly = np.polynomial.Polynomial(x).trim(1e-300)
    lo, hi = -math.inf, math.inf
    if isinstance(dom, HalfLine):
        lo = dom.a
    elif isinstance(dom, Interval):
        lo, hi = dom.a, dom.b
    deg = poly.degree()
    lead = poly.coef[-1]
    if deg >= 1:
        if math.isinf(hi) and lead < 0:
            return -math.inf
        if math.isinf(lo) and (lead > 0) == (deg % 2 == 1):
            return -math.inf
    pts = [r.real for r in poly.deriv().roots() if abs(r.imag) <= 1e-12 * max(1.0, abs(r))]
    pts = [t for t in pts if lo <= t <= hi] + [t for t in (lo, hi) if math.isfinite(t)]
    return float(min(poly(np.array(pts)))) if pts else float(poly.coef[0])


def _projection_solution(p: ConicProblem, settings: ipm.Settings | None) -> Solution | None:
    """The cone-free minimizer, if it is already feasible.

    ``x* = S'(SHS')^{-1} c`` minimizes the norm under the equalities alone; when
    it also meets the inequalities and is certifiably non-negative it is the
    optimum, with ``nu = 0`` and ``eps = 0``. Degenerate problems of this kind
    (the optimum on the boundary of the cone without strict complementarity) are
    where the interior-point method is least accurate, so they are settled here.
    """
    S, H = p.S, p.H
    if S.shape[0] == 0:
        return None
    G = S @ H @ S.T
    try:
        eta = linalg.solve(G, p.c, assume_a="pos")
    except (linalg.LinAlgError, ValueError):
        return None
    eta = eta + linalg.solve(G, p.c - G @ eta, assume_a="pos")
    x = S.T @ eta
    obj = 0.5 * float(x @ H @ x)
    if not 2.0 * obj < p.C:
        return None
    if p.U.shape[0] and np.any(p.U @ (H @ x) - p.d > 1e-12 * (1.0 + np.abs(p.d))):
        return None
    grams, w = [], None
    if p.support is not None:
        if np.min(p.support @ x) < 0:
            return None
        w = np.zeros(p.support.shape[0])
    elif p.maps is not None:
        dom = p.sos.domain
        if dom.d == 1:
            if _min_on_domain(x, dom) < 0:
                return None
        else:
            pts = np.random.default_rng(0).normal(scale=3.0, size=(2000, dom.d))
            if np.min(p.maps.basis.design_matrix(pts) @ x) < 0:
                return None
        status, grams = find_certificate(x, p.maps, settings)
        if status is not Status.OPTIMAL or not certificate_check(x, grams, p.maps).passed:
            return None
    root = math.sqrt(p.C) if math.isfinite(p.C) else math.inf
    slack = (root - math.sqrt(2.0 * obj)) / root if math.isfinite(root) else math.inf
    sol = Solution(
        x=x, grams=grams, eta=eta, nu=np.zeros(p.size), eps=np.zeros(p.U.shape[0]),
        objective=obj, gap=0.0, kkt_residuals={}, status=Status.OPTIMAL, iterations=0,
        support_duals=w, nuisance_slack=slack, nuisance_multiplier=0.0,
    )
    gap = duality_gap(p, sol, (sol.eta, sol.nu, sol.eps))
    return Solution(**{**sol.__dict__, "gap": gap, "kkt_residuals": kkt_residuals(p, sol)})


def solve_primal(p: ConicProblem, solver: SolverAdapter | None = None,
                 settings: ipm.Settings | None = None, presolve: bool = True) -> Solution:
    """Solve the primal program; never raises on infeasibility, check ``status``.

    With ``presolve`` the cone-free minimizer is tried first and returned when
    it is already feasible.
    """
    if presolve:
        sol = _projection_solution(p, settings)
        if sol is not None:
            return sol
    if solver is None:
        solver = EmbeddedSolver(settings or ipm.Settings())
    return solver.solve(p)


# -- dual ----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DualData:
    """``max -1/2 theta' Gamma theta + lin' theta`` over the dual cone.

    ``theta = (eta, nu, eps)``; ``lin = (c, 0, -d)``; ``eps >= 0`` and
    ``sum_i nu_i L_i`` PSD (or ``nu = V'w, w >= 0`` on a finite support).
    """

    Gamma: np.ndarray
    linear: np.ndarray
    sizes: tuple[int, int, int]
    cone: str

    def split(self, theta):
        a, b, _ = self.sizes
        theta = np.asarray(theta, dtype=float)
        return theta[:a], theta[a:a + b], theta[a + b:]

    def objective(self, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        return float(-0.5 * theta @ self.Gamma @ theta + self.linear @ theta)


def assemble_dual(p: ConicProblem) -> DualData:
    H, S, U = p.H, p.S, p.U
    Hi = _h_inverse(H)
    Gamma = np.block([
        [S @ H @ S.T, S, -S @ H @ U.T],
        [S.T, Hi, -U.T],
        [-U @ H @ S.T, -U, U @ H @ U.T],
    ])
    Gamma = 0.5 * (Gamma + Gamma.T)
    lin = np.concatenate([p.c, np.zeros(p.size), -p.d])
    cone = "psd" if p.maps is not None else ("support" if p.support is not None else "free")
    return DualData(Gamma, lin, (S.shape[0], p.size, U.shape[0]), cone)


def _check_duals(p: ConicProblem, eta, nu, eps):
    eta, nu = _vector(eta), _vector(nu)
    eps = _vector(eps)
    if eta.size != p.S.shape[0] or nu.size != p.size or eps.size != p.U.shape[0]:
        raise ValueError(
            f"dual shapes (eta {eta.size}, nu {nu.size}, eps {eps.size}) do not match "
            f"the problem ({p.S.shape[0]}, {p.size}, {p.U.shape[0]})"
        )
    return eta, nu, eps


def recover_primal_from_dual(p: ConicProblem, eta, nu, eps=None) -> np.ndarray:
    """``x = S'eta + H^{-1} nu - U'eps``."""
    if eps is None:
        eps = np.zeros(p.U.shape[0])
    eta, nu, eps = _check_duals(p, eta, nu, eps)
    return p.S.T @ eta + _h_solve(p.H, nu) - p.U.T @ eps


def dual_objective(p: ConicProblem, eta, nu, eps) -> float:
    eta, nu, eps = _check_duals(p, eta, nu, eps)
    y = recover_primal_from_dual(p, eta, nu, eps)
    return float(-0.5 * y @ p.H @ y + eta @ p.c - eps @ p.d)


def duality_gap(p: ConicProblem, primal, dual) -> float:
    """Primal objective minus dual objective.

    ``primal`` is a :class:`Solution` or a coefficient vector; ``dual`` is
    ``(eta, nu, eps)``.
    """
    x = primal.x if isinstance(primal, Solution) else _vector(primal)
    return 0.5 * float(x @ p.H @ x) - dual_objective(p, *dual)


def dual_cone_margin(p: ConicProblem, nu) -> float:
    """Smallest eigenvalue of ``sum_i nu_i L_i`` over the Gram blocks."""
    if p.maps is None:
        return math.inf
    return min(float(np.linalg.eigvalsh(Z)[0]) for Z in p.maps.adjoint(nu))


def kkt_residuals(p: ConicProblem, sol: Solution) -> dict:
    """Relative primal, dual and complementarity residuals of a solution."""
    H, x = p.H, sol.x
    Hx = H @ x
    out = {
        "primal_eq": float(np.max(np.abs(p.S @ Hx - p.c), initial=0.0))
        / (1.0 + float(np.max(np.abs(p.c), initial=0.0))),
        "primal_ineq": max(0.0, float(np.max(p.U @ Hx - p.d, initial=0.0)))
        / (1.0 + float(np.max(np.abs(p.d), initial=0.0))),
        "dual_ineq": max(0.0, -float(np.min(sol.eps, initial=0.0))),
    }
    scale_x = 1.0 + float(np.max(np.abs(x)))
    stat = Hx - H @ (p.S.T @ sol.eta) - sol.nu + H @ (p.U.T @ sol.eps)
    out["stationarity"] = float(np.max(np.abs(stat))) / (
        1.0 + float(np.max(np.abs(Hx))) + float(np.max(np.abs(sol.nu))))
    comp = float(sol.eps @ (p.d - p.U @ Hx))
    if p.maps is not None:
        tg = p.maps.dense @ np.concatenate([svec(G) for G in sol.grams])
        out["cone_match"] = float(np.max(np.abs(x - tg))) / scale_x
        Zs = p.maps.adjoint(sol.nu)
        # cone margins are measured after the balancing congruence
        es = _gram_diag(p, 1.0 / np.sqrt(np.diag(H)))
        Gb = [G / np.outer(e, e) for G, e in zip(sol.grams, es)]
        Zb = [Z * np.outer(e, e) for Z, e in zip(Zs, es)]
        out["primal_psd"] = max(0.0, -min(_rel_min_eig(G) for G in Gb))
        out["dual_psd"] = max(0.0, -min(_rel_min_eig(Z) for Z in Zb))
        comp += sum(float(np.sum(Z * G)) for Z, G in zip(Zs, sol.grams))
    elif p.support is not None:
        vx = p.support @ x
        out["cone_match"] = max(0.0, -float(vx.min())) / scale_x
        w = sol.support_duals
        out["dual_support"] = max(0.0, -float(w.min()))
        comp += float(w @ vx)
    out["complementarity"] = abs(comp) / (1.0 + abs(sol.objective))
    return out


def _rel_min_eig(M: np.ndarray) -> float:
    w = np.linalg.eigvalsh(M)
    return float(w[0]) / max(1.0, float(np.abs(w).max()))


def relative_gap(sol: Solution) -> float:
    return abs(sol.gap) / max(1.0, abs(sol.objective))


def find_certificate(x, maps: SelectionMaps, settings: ipm.Settings | None = None):
    """Search for PSD Gram blocks with ``T(G) = x``.

    Returns ``(status, grams)``; ``grams`` is empty unless a certificate exists.
    """
    x = _vector(x)
    T = maps.dense
    sizes = maps.structure.svec_sizes
    ng = T.shape[1]
    scale = max(1.0, float(np.max(np.abs(x))))
    A = [T]
    cones = [ZeroCone(T.shape[0])]
    for blk, size in zip(maps.structure.blocks, sizes):
        cones.append(PSDCone(blk.gram_size))
    A.append(-np.eye(ng))
    b = np.concatenate([x / scale, np.zeros(ng)])
    # a small trace penalty keeps the feasibility problem bounded and central
    P = 1e-8 * np.eye(ng)
    q = np.concatenate([svec(np.eye(blk.gram_size)) for blk in maps.structure.blocks]) * 1e-8
    res = ipm.solve(P, q, np.vstack(A), b, cones, settings or ipm.Settings())
    if res.status != "Optimal":
        return Status(res.status), []
    g = res.x * scale
    grams = [smat(v, blk.gram_size) for v, blk in
             zip(np.split(g, np.cumsum(sizes)[:-1]), maps.structure.blocks)]
    return Status.OPTIMAL, grams
