"""Cones for the interior-point method, with Nesterov-Todd scalings.

Each cone works on a contiguous slice of the slack/dual vectors. PSD blocks
are stored as ``svec`` (upper triangle, off-diagonals times sqrt(2)) so that
the Euclidean inner product matches the trace inner product.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import linalg

from ..sos_cones import smat, svec

INF = math.inf


class ZeroCone:
    """``s = 0``; the dual variable is free."""

    def __init__(self, dim: int):
        self.dim = dim
        self.degree = 0

    def unit(self):
        return np.zeros(self.dim)


class NonnegCone:
    def __init__(self, dim: int):
        self.dim = dim
        self.degree = dim

    def unit(self):
        return np.ones(self.dim)

    def margin(self, v):
        return float(v.min()) if v.size else INF

    def step_length(self, v, dv):
        neg = dv < 0
        if not neg.any():
            return INF
        return float(np.min(-v[neg] / dv[neg]))

    def scaling(self, s, z):
        return _NonnegScaling(s, z)

    def jordan(self, u, v):
        return u * v


class _NonnegScaling:
    def __init__(self, s, z):
        self.w = np.sqrt(s / z)
        self.lam = np.sqrt(s * z)

    def WtW(self):
        return np.diag(self.w**2)

    def W(self, v):
        return self.w * v

    def Wt(self, v):
        return self.w * v

    def W_inv_T(self, v):
        return v / self.w

    def lam_div(self, d):
        return d / self.lam


class SOCone:
    """``{(t, u): t >= ||u||}``."""

    def __init__(self, dim: int):
        self.dim = dim
        self.degree = 1

    def unit(self):
        e = np.zeros(self.dim)
        e[0] = 1.0
        return e

    def margin(self, v):
        return float(v[0] - np.linalg.norm(v[1:]))

    def step_length(self, v, dv):
        # first positive root of det(v + a dv) = 0, det(x) = x0^2 - |x1|^2
        a = dv[0] ** 2 - dv[1:] @ dv[1:]
        b = 2.0 * (v[0] * dv[0] - v[1:] @ dv[1:])
        c = v[0] ** 2 - v[1:] @ v[1:]
        if c <= 0:
            return 0.0
        roots = []
        if abs(a) < 1e-300:
            if b < 0:
                roots.append(-c / b)
        else:
            disc = b * b - 4 * a * c
            if disc >= 0:
                sq = math.sqrt(disc)
                q = -0.5 * (b + math.copysign(sq, b))
                for r in (q / a, c / q if q != 0 else INF):
                    if r > 0:
                        roots.append(r)
        if dv[0] < 0:
            roots.append(-v[0] / dv[0])
        return min(roots) if roots else INF

    def scaling(self, s, z):
        return _SOCScaling(s, z)

    def jordan(self, u, v):
        return np.concatenate(([u @ v], u[0] * v[1:] + v[0] * u[1:]))


def _jdot(u, v):
    return u[0] * v[0] - u[1:] @ v[1:]


def _det(u):
    r = float(np.linalg.norm(u[1:]))
    return (u[0] - r) * (u[0] + r)


class _SOCScaling:
    def __init__(self, s, z):
        a = math.sqrt(max(_det(s), 1e-300))
        b = math.sqrt(max(_det(z), 1e-300))
        sb, zb = s / a, z / b
        gamma = math.sqrt(max((1.0 + sb @ zb) / 2.0, 1.0))
        Jz = zb.copy()
        Jz[1:] = -Jz[1:]
        w = (sb + Jz) / (2.0 * gamma)
        # hyperbolic Householder form of the scaling point
        v = w.copy()
        v[0] += 1.0
        v /= math.sqrt(2.0 * (w[0] + 1.0))
        self.beta = math.sqrt(a / b)
        J = np.eye(s.size)
        J[1:, 1:] *= -1.0
        self.Wm = self.beta * (2.0 * np.outer(v, v) - J)
        Jv = J @ v
        self.Winv = (2.0 * np.outer(Jv, Jv) - J) / self.beta
        self.lam = self.Wm @ z

    def WtW(self):
        return self.Wm @ self.Wm

    def W(self, v):
        return self.Wm @ v

    Wt = W

    def W_inv_T(self, v):
        return self.Winv @ v

    def lam_div(self, d):
        l0, l1 = self.lam[0], self.lam[1:]
        det = _det(self.lam)
        y0 = (l0 * d[0] - l1 @ d[1:]) / det
        return np.concatenate(([y0], (d[1:] - y0 * l1) / l0))


class PSDCone:
    def __init__(self, size: int):
        self.size = size
        self.dim = size * (size + 1) // 2
        self.degree = size
        self._P = _svec_to_vec(size)

    def unit(self):
        return svec(np.eye(self.size))

    def margin(self, v):
        return float(np.linalg.eigvalsh(smat(v, self.size))[0])

    def step_length(self, v, dv):
        X = smat(v, self.size)
        dX = smat(dv, self.size)
        try:
            L = np.linalg.cholesky(X)
        except np.linalg.LinAlgError:
            return 0.0
        Li = linalg.solve_triangular(L, np.eye(self.size), lower=True)
        lo = np.linalg.eigvalsh(Li @ dX @ Li.T)[0]
        return INF if lo >= 0 else float(-1.0 / lo)

    def scaling(self, s, z):
        return _PSDScaling(self, s, z)

    def jordan(self, u, v):
        U, V = smat(u, self.size), smat(v, self.size)
        return svec(0.5 * (U @ V + V @ U))


def _svec_to_vec(n: int) -> np.ndarray:
    P = np.zeros((n * n, n * (n + 1) // 2))
    col = 0
    r2 = 1.0 / math.sqrt(2.0)
    for a in range(n):
        for b in range(a, n):
            if a == b:
                P[a * n + a, col] = 1.0
            else:
                P[a * n + b, col] = r2
                P[b * n + a, col] = r2
            col += 1
    return P


def _chol(X):
    try:
        return np.linalg.cholesky(X)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(0.5 * (X + X.T))
        floor = max(w[-1], 1e-300) * 1e-15
        return np.linalg.cholesky((V * np.maximum(w, floor)) @ V.T)


class _PSDScaling:
    def __init__(self, cone: PSDCone, s, z):
        self.cone = cone
        n = cone.size
        S, Z = smat(s, n), smat(z, n)
        Ls, Lz = _chol(S), _chol(Z)
        U, lam, Vt = np.linalg.svd(Lz.T @ Ls)
        self.R = Ls @ Vt.T / np.sqrt(lam)
        self.Rinv = (np.sqrt(lam)[:, None] * Vt) @ linalg.solve_triangular(
            Ls, np.eye(n), lower=True
        )
        self.lam_diag = lam
        self.lam = svec(np.diag(lam))

    def WtW(self):
        M = self.R @ self.R.T
        P = self.cone._P
        return P.T @ np.kron(M, M) @ P

    def W(self, v):
        n = self.cone.size
        return svec(self.R.T @ smat(v, n) @ self.R)

    def Wt(self, v):
        n = self.cone.size
        return svec(self.R @ smat(v, n) @ self.R.T)

    def W_inv_T(self, v):
        n = self.cone.size
        return svec(self.Rinv @ smat(v, n) @ self.Rinv.T)

    def lam_div(self, d):
        n = self.cone.size
        D = smat(d, n)
        lam = self.lam_diag
        return svec(2.0 * D / (lam[:, None] + lam[None, :]))
