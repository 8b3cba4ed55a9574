"""PLR expansion of the basic affine jump-diffusion transition density.

The process is ``dY = kappa (theta - Y) dt + sigma sqrt(Y) dW + dL`` with
``L`` compound Poisson (intensity ``lam``, exponential jumps of mean ``nu``).
Its conditional moments are polynomial in ``Y_0`` and available through a
matrix exponential; the density of ``Y_delta`` is expanded as a likelihood
ratio against a Gamma weight.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import integrate, linalg, stats
from scipy.special import comb, factorial

from . import kernels
from .moments import Gamma, MomentMatrix, MomentVector, moment_matrix_for
from .plr import ConstraintSpec, PLRModel, fit, fms_constrained, h_norm
from .polybasis import Polynomial, build_basis
from .sos_cones import HalfLine

STEPS_PER_UNIT = 500
SCALINGS = ("matched", "printed")


class ParameterError(ValueError):
    pass


@dataclass(frozen=True)
class BajdParams:
    """BAJD parameters. Defaults are the ones used for the figures."""

    kappa: float = 1.0
    theta: float = 0.05
    sigma: float = 0.2
    lam: float = 1.0
    nu: float = 0.05
    y0: float = 0.05

    def __post_init__(self):
        vals = dict(kappa=self.kappa, theta=self.theta, sigma=self.sigma,
                    lam=self.lam, nu=self.nu, y0=self.y0)
        for k, v in vals.items():
            if not math.isfinite(v):
                raise ParameterError(f"{k} must be finite, got {v}")
        if self.kappa <= 0 or self.theta <= 0 or self.sigma <= 0:
            raise ParameterError("kappa, theta and sigma must be positive")
        if self.lam < 0 or self.nu < 0:
            raise ParameterError("lam and nu must be non-negative")
        if self.y0 < 0:
            raise ParameterError(f"y0 must be non-negative, got {self.y0}")
        if not 2 * self.kappa * self.theta > self.sigma**2:
            raise ParameterError(
                f"density existence needs 2*kappa*theta > sigma^2, got "
                f"{2 * self.kappa * self.theta:.6g} <= {self.sigma**2:.6g}"
            )

    def to_json(self) -> dict:
        return dict(kappa=self.kappa, theta=self.theta, sigma=self.sigma,
                    lam=self.lam, nu=self.nu, y0=self.y0)


def generator_matrix(p: BajdParams, order: int) -> np.ndarray:
    """Action of the generator on ``1, y, ..., y^K`` (lower triangular)."""
    K = order
    A = np.zeros((K + 1, K + 1))
    for k in range(1, K + 1):
        A[k, k] = -k * p.kappa
        A[k, k - 1] = k * p.kappa * p.theta + 0.5 * p.sigma**2 * k * (k - 1) + p.lam * k * p.nu
        for j in range(2, k + 1):
            A[k, k - j] = p.lam * comb(k, j, exact=True) * factorial(j, exact=True) * p.nu**j
    return A


def bajd_conditional_moments(p: BajdParams, delta: float, order: int) -> MomentVector:
    """``E[Y_delta^k | Y_0 = y0]`` for ``k = 0..order``."""
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta}")
    if order < 0:
        raise ValueError("order must be non-negative")
    m0 = p.y0 ** np.arange(order + 1, dtype=float)
    m = linalg.expm(delta * generator_matrix(p, order)) @ m0
    m[0] = 1.0
    return MomentVector(build_basis(1, order), m)


def first_moment_closed_form(p: BajdParams, delta: float) -> float:
    """Solution of ``m' = kappa theta + lam nu - kappa m``."""
    m_inf = p.theta + p.lam * p.nu / p.kappa
    return m_inf + (p.y0 - m_inf) * math.exp(-p.kappa * delta)


def gamma_weight_from_moments(mu1: float, mu2: float) -> float:
    """Shape ``q`` of the Gamma(1+q, 1) weight with the target's coefficient of variation."""
    var = mu2 - mu1**2
    if not mu1 > 0 or not var > 0:
        raise ValueError(f"need mu2 > mu1^2 > 0, got mu1={mu1}, mu2={mu2}")
    q = mu1**2 / var - 1.0
    if q <= -1:
        raise ValueError(f"Gamma shape q={q} is not > -1")
    return q


@dataclass(frozen=True, eq=False)
class BajdExpansion:
    """PLR and FMS expansions in the scaled variable ``v = Y / scale``."""

    params: BajdParams
    delta: float
    moments: MomentVector  # of Y, up to the matched order
    scale: float
    q: float
    plr: PLRModel
    fms: Polynomial

    @property
    def weight(self) -> Gamma:
        return self.plr.weight

    @property
    def H(self) -> MomentMatrix:
        return self.plr.H

    def _density(self, poly: Polynomial, y):
        y = np.asarray(y, dtype=float)
        v = y.reshape(-1) / self.scale
        out = poly(v) * self.weight.density(v) / self.scale
        return out.reshape(y.shape)

    def plr_density(self, y):
        return self._density(self.plr.xi, y)

    def fms_density(self, y):
        return self._density(self.fms, y)

    def grid(self, upper: float | None = None, n_points: int = 10_000) -> np.ndarray:
        """Points in ``(0, upper]`` (Y units); default upper is the weight's 1-1e-6 quantile."""
        if upper is None:
            upper = self.weight.quantile_range(1e-6)[1] * self.scale
        return np.linspace(upper / n_points, upper, n_points)

    def grid_min(self, which: str = "plr", upper: float | None = None) -> float:
        poly = self.plr.xi if which == "plr" else self.fms
        return float(np.min(poly(self.grid(upper) / self.scale)))

    def moment_residuals(self, which: str = "plr") -> np.ndarray:
        """Relative replay errors of the matched moments, in scaled units."""
        poly = self.plr.xi if which == "plr" else self.fms
        m = self.moments.order
        target = self.moments.values / self.scale ** np.arange(m + 1)
        got = (self.H.entries @ poly.coeffs)[: m + 1]
        return np.abs(got - target) / np.maximum(np.abs(target), 1.0)

    def total_mass(self, which: str = "plr") -> float:
        """Quadrature of ``xi z`` over ``(0, inf)``, independent of ``H``."""
        poly = self.plr.xi if which == "plr" else self.fms
        f = lambda v: float(poly(np.array([v]))[0] * self.weight.density(np.array([v]))[0])
        hi = self.weight.quantile_range(1e-12)[1]
        val, _ = integrate.quad(f, 0.0, hi, limit=200)
        tail, _ = integrate.quad(f, hi, np.inf, limit=200)
        return val + tail

    @property
    def plr_norm(self) -> float:
        return self.plr.norm

    @property
    def fms_norm(self) -> float:
        return h_norm(self.H, self.fms)


def _scaling(m: MomentVector, scaling: str) -> tuple[float, float]:
    mu1, mu2 = m.values[1], m.values[2]
    q = gamma_weight_from_moments(mu1, mu2)
    if scaling == "matched":
        # Gamma(1+q, 1) then has the mean and variance of Y / scale
        return (mu2 - mu1**2) / mu1, q
    if scaling == "printed":
        return 1.0, q
    raise ValueError(f"scaling must be one of {SCALINGS}, got {scaling!r}")


def expand_density(p: BajdParams, delta: float, m_match: int = 5, n: int = 8,
                   scaling: str = "matched", **fit_kwargs) -> BajdExpansion:
    """Fit the PLR and FMS expansions matching ``mu_0..mu_m``.

    ``scaling="matched"`` expands ``Y / scale`` with ``scale = Var / mu_1`` so
    the Gamma(1+q, 1) weight matches the first two moments; ``"printed"``
    uses the weight on ``Y`` directly.
    """
    if m_match < 2 and scaling == "matched":
        raise ValueError("the matched scaling needs m_match >= 2")
    if n < m_match:
        raise ValueError(f"n={n} must be at least m_match={m_match}")
    m = bajd_conditional_moments(p, delta, max(m_match, 2))
    scale, q = _scaling(m, scaling)
    m = m.truncate(m_match)
    target = m.values / scale ** np.arange(m_match + 1)
    weight = Gamma(q)
    H = moment_matrix_for(weight, build_basis(1, n))
    cons = ConstraintSpec.moments(target)
    model = fit(weight, cons, n, HalfLine(), H=H, **fit_kwargs)
    return BajdExpansion(p, delta, m, scale, q, model, fms_constrained(H, cons))


def residual_convergence(p: BajdParams, delta: float, m_list: Sequence[int], n: int = 8,
                         scaling: str = "matched") -> list[float]:
    """``||xi°||_H`` for each number of matched moments ``m``.

    The weight (and scaling) is fixed from the first two moments so that all
    norms live in the same space.
    """
    m_list = list(m_list)
    if any(b <= a for a, b in zip(m_list, m_list[1:])):
        raise ValueError("m_list must be increasing")
    if m_list and m_list[-1] > n:
        raise ValueError("largest m exceeds n")
    mom = bajd_conditional_moments(p, delta, max(max(m_list, default=0), 2))
    scale, q = _scaling(mom, scaling)
    weight = Gamma(q)
    H = moment_matrix_for(weight, build_basis(1, n))
    vals = mom.values / scale ** np.arange(mom.order + 1)
    norms = []
    for m in m_list:
        model = fit(weight, ConstraintSpec.moments(vals[: m + 1]), n, HalfLine(), H=H)
        norms.append(model.correction_norm)
    return norms


def mc_transition_oracle(p: BajdParams, delta: float, n_paths: int,
                         n_steps: int | None = None, seed: int = 0,
                         threads: int | None = None) -> np.ndarray:
    """Samples of ``Y_delta`` from a full-truncation Euler scheme.

    Each path draws from its own counter-based stream keyed by ``(seed, path)``,
    so the output does not depend on ``threads``.
    """
    if n_steps is None:
        n_steps = max(1, round(STEPS_PER_UNIT * delta))
    if n_paths < 1 or n_steps < 1:
        raise ValueError("n_paths and n_steps must be at least 1")
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta}")
    return kernels.bajd_paths(n_paths, n_steps, delta / n_steps, p.kappa, p.theta,
                              p.sigma, p.lam, p.nu, p.y0, seed, threads)


def mc_moment_check(samples: np.ndarray, moments: MomentVector) -> list[dict]:
    """Per-order z-scores of sample moments against the exact ones."""
    out = []
    k = samples.size
    for j in range(1, moments.order + 1):
        xj = samples**j
        se = xj.std(ddof=1) / math.sqrt(k)
        mean = xj.mean()
        out.append(dict(order=j, exact=float(moments.values[j]), mc=float(mean),
                        se=float(se), z=float((mean - moments.values[j]) / se)))
    return out


def write_plot_csv(path, exp: BajdExpansion, samples: np.ndarray | None = None,
                   upper: float = 0.3, n_points: int = 300) -> None:
    """Columns ``t, plr_density, fms_density, mc_kde`` on ``(0, upper]``."""
    t = np.linspace(upper / n_points, upper, n_points)
    plr, fms = exp.plr_density(t), exp.fms_density(t)
    if samples is not None and samples.size > 1:
        sub = samples[: 200_000]
        kde = stats.gaussian_kde(sub)(t)
    else:
        kde = np.full_like(t, np.nan)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "plr_density", "fms_density", "mc_kde"])
        for row in zip(t, plr, fms, kde):
            w.writerow([f"{v:.17g}" for v in row])


__all__ = [
    "BajdExpansion",
    "BajdParams",
    "ParameterError",
    "bajd_conditional_moments",
    "expand_density",
    "first_moment_closed_form",
    "gamma_weight_from_moments",
    "generator_matrix",
    "mc_moment_check",
    "mc_transition_oracle",
    "residual_convergence",
    "write_plot_csv",
]
