"""Homogeneous self-dual interior-point method for conic quadratic programs.

Solves::

    minimize    1/2 v'Pv + q'v
    subject to  Av + s = b,  s in K

where ``K`` is a product of zero, non-negative, second-order and PSD cones.
The homogeneous embedding adds ``tau`` and ``kappa`` so that infeasibility
shows up as ``tau -> 0`` with a certificate in ``z``. Each iteration uses
Nesterov-Todd scaling, a Mehrotra predictor-corrector step and a dense LU
factorization of the quasi-definite KKT matrix.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .cones import ZeroCone

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Settings:
    max_iter: int = 200
    tol_feas: float = 1e-10
    tol_gap_abs: float = 1e-11
    tol_gap_rel: float = 1e-10
    tol_infeas: float = 1e-9
    # accepted as optimal if the run stalls after reaching these
    reduced_feas: float = 1e-8
    reduced_gap: float = 1e-7
    step_fraction: float = 0.99
    static_reg: float = 1e-13
    refine_steps: int = 4
    # "kkt": least-squares start shifted into the cone; "unit": x = 0, s = z = e
    init: str = "kkt"


@dataclass
class IPMResult:
    status: str
    x: np.ndarray
    s: np.ndarray
    z: np.ndarray
    iterations: int
    primal_residual: float
    dual_residual: float
    gap: float
    history: list = field(default_factory=list)


def _slices(cones):
    out, start = [], 0
    for c in cones:
        out.append(slice(start, start + c.dim))
        start += c.dim
    return out


class _Cones:
    """The product cone, with per-block dispatch."""

    def __init__(self, cones):
        self.cones = list(cones)
        self.slices = _slices(self.cones)
        self.m = sum(c.dim for c in self.cones)
        self.degree = sum(c.degree for c in self.cones)
        self.active = [(c, sl) for c, sl in zip(self.cones, self.slices)
                       if not isinstance(c, ZeroCone)]
        self.zero_mask = np.zeros(self.m, dtype=bool)
        for c, sl in zip(self.cones, self.slices):
            if isinstance(c, ZeroCone):
                self.zero_mask[sl] = True

    def unit(self):
        e = np.zeros(self.m)
        for c, sl in self.active:
            e[sl] = c.unit()
        return e

    def dot(self, s, z):
        return float(sum(s[sl] @ z[sl] for _, sl in self.active))

    def step(self, v, dv):
        a = math.inf
        for c, sl in self.active:
            a = min(a, c.step_length(v[sl], dv[sl]))
        return a


def _shift(cones: _Cones, v):
    out = v.copy()
    for c, sl in cones.active:
        a = c.margin(v[sl])
        if a < 1e-8 * max(1.0, np.abs(v[sl]).max(initial=0.0)):
            out[sl] = v[sl] + (1.0 + max(-a, 0.0)) * c.unit()
    return out


def _norm(v):
    return float(np.max(np.abs(v))) if v.size else 0.0


def solve(P, q, A, b, cones, settings: Settings | None = None) -> IPMResult:
    settings = settings or Settings()
    P = np.asarray(P, dtype=float)
    q = np.asarray(q, dtype=float)
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    K = _Cones(cones)
    n, m = q.size, b.size
    if A.shape != (m, n) or K.m != m:
        raise ValueError(f"shape mismatch: A {A.shape}, q {n}, b {m}, cones {K.m}")

    zm = K.zero_mask
    reg = settings.static_reg * max(1.0, _norm(P), _norm(A))

    def factor(WtW_blocks):
        Kexact = np.zeros((n + m, n + m))
        Kexact[:n, :n] = P
        Kexact[:n, n:] = A.T
        Kexact[n:, :n] = A
        for (c, sl), WtW in zip(K.active, WtW_blocks):
            Kexact[n + sl.start:n + sl.stop, n + sl.start:n + sl.stop] = -WtW
        if not np.isfinite(Kexact).all():
            raise np.linalg.LinAlgError("non-finite KKT matrix")
        # symmetric Ruiz equilibration: the NT blocks span many orders of magnitude
        D = np.ones(n + m)
        Ks = Kexact
        for _ in range(10):
            r = np.sqrt(np.max(np.abs(Ks), axis=1))
            r[r == 0] = 1.0
            D /= r
            Ks = Kexact * np.outer(D, D)
            if np.abs(1.0 - np.max(np.abs(Ks), axis=1)).max() < 1e-2:
                break
        # quasi-definite regularization; escalated when the factorization is singular
        sign = np.concatenate([np.ones(n), -np.ones(m)])
        delta = settings.static_reg
        for _ in range(6):
            Kmat = Ks + np.diag(delta * sign)
            with warnings.catch_warnings():
                warnings.simplefilter("error", linalg.LinAlgWarning)
                try:
                    return (linalg.lu_factor(Kmat, check_finite=False), D), Kexact
                except linalg.LinAlgWarning:
                    delta *= 100.0
        raise np.linalg.LinAlgError("singular KKT matrix")

    def kkt_solve(fac, Kexact, rhs):
        (lu, D), exact = fac, Kexact

        def apply(r):
            return D * linalg.lu_solve(lu, D * r, check_finite=False)

        u = apply(rhs)
        for _ in range(settings.refine_steps):
            r = rhs - exact @ u
            if _norm(r) <= 1e-15 * max(1.0, _norm(rhs)):
                break
            u = u + apply(r)
        return u[:n], u[n:]

    # -- initial point -------------------------------------------------------
    if settings.init == "unit":
        x = np.zeros(n)
        s = K.unit()
        z = K.unit()
    else:
        ident = [np.eye(c.dim) for c, _ in K.active]
        fac0, K0 = factor(ident)
        x, z0 = kkt_solve(fac0, K0, np.concatenate([-q, b]))
        s = _shift(K, -z0)
        z = _shift(K, z0)
        s[zm] = 0.0
        z[zm] = z0[zm]
    tau, kappa = 1.0, 1.0

    bnorm = max(1.0, _norm(b))
    qnorm = max(1.0, _norm(q))
    history = []
    status = "MaxIterations"
    best = None
    it = 0
    stall = 0

    def metrics():
        xs, ss, zs = x / tau, s / tau, z / tau
        Px = P @ xs
        xPx = float(xs @ Px)
        pobj = 0.5 * xPx + q @ xs
        dobj = -0.5 * xPx - b @ zs
        pres = _norm(A @ xs + ss - b) / max(bnorm, _norm(A @ xs), _norm(ss))
        dres = _norm(Px + A.T @ zs + q) / max(qnorm, _norm(Px), _norm(A.T @ zs))
        gap = abs(pobj - dobj)
        return pres, dres, gap, pobj, dobj

    for it in range(1, settings.max_iter + 1):
        pres, dres, gap, pobj, dobj = metrics()
        mu = (K.dot(s, z) + tau * kappa) / (K.degree + 1)
        history.append((pres, dres, gap, pobj, tau, kappa, mu))
        log.debug("it %3d pres %.2e dres %.2e gap %.2e pobj %.6e tau %.2e mu %.2e",
                  it, pres, dres, gap, pobj, tau, mu)
        gap_ok = gap <= settings.tol_gap_abs or gap <= settings.tol_gap_rel * max(
            1.0, min(abs(pobj), abs(dobj)))
        if pres <= settings.tol_feas and dres <= settings.tol_feas and gap_ok:
            status = "Optimal"
            break
        reduced = (pres <= settings.reduced_feas and dres <= settings.reduced_feas
                   and gap <= settings.reduced_gap * max(1.0, min(abs(pobj), abs(dobj))))
        if reduced:
            best = (x.copy(), s.copy(), z.copy(), tau)
        # primal infeasibility certificate: z in K*, A'z = 0, b'z < 0
        btz = float(b @ z)
        if btz < 0:
            atz = _norm(A.T @ z)
            if atz <= settings.tol_infeas * abs(btz) or (
                tau < 1e-10 * kappa and atz <= 1e-6 * abs(btz)
            ):
                status = "Infeasible"
                break

        # -- Newton system ---------------------------------------------------
        try:
            scal = [c.scaling(s[sl], z[sl]) for c, sl in K.active]
            fac, Kx = factor([w.WtW() for w in scal])
        except (np.linalg.LinAlgError, ValueError, FloatingPointError):
            status = "NumericalFailure"
            break
        lam = np.zeros(m)
        for (c, sl), w in zip(K.active, scal):
            lam[sl] = w.lam

        Px = P @ x
        xPx = float(x @ Px)
        r_x = Px + A.T @ z + q * tau
        r_z = A @ x + s - b * tau
        r_tau = float(q @ x + b @ z + kappa + xPx / tau)
        qhat = q + 2.0 * Px / tau
        dx2, dz2 = kkt_solve(fac, Kx, np.concatenate([-q, b]))
        denom2 = float(qhat @ dx2 + b @ dz2) - xPx / tau**2 - kappa / tau

        def newton(eta, d_s, d_kappa):
            corr = np.zeros(m)
            for (c, sl), w in zip(K.active, scal):
                corr[sl] = w.Wt(w.lam_div(d_s[sl]))
            dx1, dz1 = kkt_solve(fac, Kx, np.concatenate([-eta * r_x, -eta * r_z + corr]))
            dtau = (-eta * r_tau + d_kappa / tau - qhat @ dx1 - b @ dz1) / denom2
            dx = dx1 + dtau * dx2
            dz = dz1 + dtau * dz2
            ds = np.zeros(m)
            for (c, sl), w in zip(K.active, scal):
                ds[sl] = -corr[sl] - w.Wt(w.W(dz[sl]))
            dkappa = (-d_kappa - kappa * dtau) / tau
            return dx, ds, dz, float(dtau), float(dkappa)

        def max_step(ds, dz, dtau, dkappa):
            a = min(K.step(s, ds), K.step(z, dz))
            if dtau < 0:
                a = min(a, -tau / dtau)
            if dkappa < 0:
                a = min(a, -kappa / dkappa)
            return a

        # predictor
        d_s = np.zeros(m)
        for (c, sl), w in zip(K.active, scal):
            d_s[sl] = c.jordan(w.lam, w.lam)
        try:
            dxa, dsa, dza, dta, dka = newton(1.0, d_s, tau * kappa)
        except (np.linalg.LinAlgError, ValueError):
            status = "NumericalFailure"
            break
        alpha_a = min(1.0, max_step(dsa, dza, dta, dka))
        sigma = (1.0 - alpha_a) ** 3

        # corrector
        for (c, sl), w in zip(K.active, scal):
            d_s[sl] = (c.jordan(w.lam, w.lam)
                       + c.jordan(w.W_inv_T(dsa[sl]), w.W(dza[sl]))
                       - sigma * mu * c.unit())
        d_kappa = tau * kappa + dta * dka - sigma * mu
        dx, ds, dz, dtau, dkappa = newton(1.0 - sigma, d_s, d_kappa)
        alpha = min(1.0, settings.step_fraction * max_step(ds, dz, dtau, dkappa))
        if not np.isfinite(alpha) or not all(np.isfinite(v).all() for v in (dx, ds, dz)):
            status = "NumericalFailure"
            break

        x = x + alpha * dx
        s = s + alpha * ds
        z = z + alpha * dz
        tau = tau + alpha * dtau
        kappa = kappa + alpha * dkappa

        if alpha < 1e-8:
            stall += 1
            if stall >= 3:
                status = "NumericalFailure"
                break
        else:
            stall = 0

    if status in ("MaxIterations", "NumericalFailure") and best is not None:
        x, s, z, tau = best
        status = "Optimal"
    if not all(np.isfinite(v).all() for v in (x, s, z)) or not tau > 0:
        nan = np.full(n, np.nan)
        return IPMResult(status, nan, np.full(m, np.nan), np.full(m, np.nan), it,
                         math.inf, math.inf, math.inf, history)
    pres, dres, gap, _, _ = metrics()
    if status == "Infeasible":
        # return the certificate normalized rather than the blown-up iterate
        scale = max(_norm(z), 1e-300)
        return IPMResult(status, x / scale, s / scale, z / scale, it, pres, dres, gap, history)
    return IPMResult(status, x / tau, s / tau, z / tau, it, pres, dres, gap, history)
