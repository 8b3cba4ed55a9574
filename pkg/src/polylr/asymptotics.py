"""Sampling behaviour of the Gaussian-tilt PLR fitted from sample moments.

The moment matrix is estimated from ``k`` standard normal draws while the
targets ``(1, mu)`` stay at their population values. Replication ``r`` draws
from its own stream keyed by ``(seed, r)``, so results do not depend on how
replications are scheduled.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .kernels import default_threads
from .moments import AssumptionError, empirical_moments, moment_matrix
from .polybasis import build_basis
from .solver import ConicProblem, Status, solve_primal
from .sos_cones import RealLine, selection_maps, structure_for

BASIS = build_basis(1, 2)
_MAPS = selection_maps(structure_for(RealLine(), 2), BASIS)
_S = np.eye(3)[:2]


class InfeasibleTiltError(ValueError):
    pass


@dataclass(frozen=True)
class SimulationConfig:
    mu: float = 0.6
    k: int = 100
    reps: int = 10_000
    seed: int = 0

    def __post_init__(self):
        if not abs(self.mu) < 1:
            raise ValueError(f"need |mu| < 1, got {self.mu}")
        if self.k < 3:
            raise ValueError(f"need k >= 3 draws, got {self.k}")
        if self.reps < 1:
            raise ValueError("reps must be at least 1")


def gaussian_tilt_truth(mu: float) -> np.ndarray:
    """Closed-form PLR ``(x0, x1, x2)`` for the standard Gaussian with mean ``mu``."""
    if abs(mu) > 1:
        raise InfeasibleTiltError(
            f"mean {mu} is not attainable: a quadratic tilt needs -1 <= mu <= 1"
        )
    r = math.sqrt(max(1.0 - mu * mu, 0.0))
    return np.array([0.5 * (1 + r), mu, 0.5 * (1 - r)])


def draws(k: int, seed: int, rep: int = 0) -> np.ndarray:
    return np.random.default_rng([seed, rep]).standard_normal(k)


@dataclass(frozen=True)
class SampleFit:
    x: np.ndarray
    status: Status

    @property
    def ok(self) -> bool:
        return self.status is Status.OPTIMAL


def fit_sample(samples: np.ndarray, mu: float) -> SampleFit:
    """Tilt fitted with the empirical moment matrix and population targets."""
    H = moment_matrix(empirical_moments(samples, 4), BASIS)
    try:
        p = ConicProblem(H, _S, np.array([1.0, mu]),
                         sos=_MAPS.structure, maps=_MAPS)
    except ValueError as exc:
        raise AssumptionError(str(exc)) from None
    sol = solve_primal(p)
    return SampleFit(sol.x, sol.status)


def sample_fit(mu: float, k: int, seed: int, rep: int = 0) -> SampleFit:
    if k < 3:
        raise ValueError(f"need k >= 3 draws, got {k}")
    return fit_sample(draws(k, seed, rep), mu)


def _run(args) -> list[tuple[np.ndarray, str]]:
    mu, k, seed, reps = args
    out = []
    for r in reps:
        f = sample_fit(mu, k, seed, r)
        out.append((f.x, f.status.value))
    return out


def _map_reps(mu: float, k: int, seed: int, reps: int, workers: int | None):
    workers = default_threads() if workers is None else max(1, workers)
    idx = list(range(reps))
    if workers == 1 or reps < 64:
        return _run((mu, k, seed, idx))
    chunks = [idx[i::workers] for i in range(workers)]
    with ProcessPoolExecutor(workers) as ex:
        parts = list(ex.map(_run, [(mu, k, seed, c) for c in chunks]))
    # reassemble in replication order
    out = [None] * reps
    for c, part in zip(chunks, parts):
        for r, item in zip(c, part):
            out[r] = item
    return out


def _summary(errors: np.ndarray) -> dict:
    if errors.shape[0] == 0:
        return {}
    out = {}
    for j in range(errors.shape[1]):
        e = errors[:, j]
        sd = float(e.std(ddof=1)) if e.size > 1 else 0.0
        skew = float(stats.skew(e)) if e.size > 2 and sd > 0 else 0.0
        out[f"x{j}"] = {"mean": float(e.mean()), "sd": sd, "skewness": skew}
    return out


@dataclass(frozen=True, eq=False)
class SamplingResult:
    config: SimulationConfig
    estimates: np.ndarray  # reps x 3, NaN rows for failed replications
    status: list[str]
    truth: np.ndarray = field(repr=False)

    @property
    def errors(self) -> np.ndarray:
        return self.estimates - self.truth

    @property
    def ok(self) -> np.ndarray:
        return np.array([s == Status.OPTIMAL.value for s in self.status])

    @property
    def n_infeasible(self) -> int:
        return sum(s == Status.INFEASIBLE.value for s in self.status)

    @property
    def n_failed(self) -> int:
        return len(self.status) - int(self.ok.sum())

    def summary(self) -> dict:
        return {
            "mu": self.config.mu, "k": self.config.k, "reps": self.config.reps,
            "seed": self.config.seed, "truth": self.truth.tolist(),
            "n_optimal": int(self.ok.sum()), "n_infeasible": self.n_infeasible,
            "n_failed": self.n_failed, "coefficients": _summary(self.errors[self.ok]),
        }

    def write(self, csv_path, json_path) -> None:
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["rep", "x0_err", "x1_err", "x2_err", "status"])
            for r, (e, s) in enumerate(zip(self.errors, self.status)):
                w.writerow([r] + [f"{v:.17g}" for v in e] + [s])
        with open(json_path, "w") as fh:
            json.dump(_round(self.summary()), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _round(obj):
    if isinstance(obj, float):
        return float(f"{obj:.17g}")
    if isinstance(obj, dict):
        return {k: _round(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_round(v) for v in obj]
    return obj


def simulate_sampling_distribution(config: SimulationConfig,
                                   workers: int | None = None) -> SamplingResult:
    rows = _map_reps(config.mu, config.k, config.seed, config.reps, workers)
    est = np.array([x if np.all(np.isfinite(x)) else np.full(3, np.nan) for x, _ in rows])
    return SamplingResult(config, est, [s for _, s in rows], gaussian_tilt_truth(config.mu))


def consistency_sweep(mu: float, k_grid, reps: int, seed: int = 0,
                      workers: int | None = None) -> dict[int, np.ndarray]:
    """Median ``|x_hat - x|`` per coefficient for each sample size."""
    k_grid = list(k_grid)
    if any(b <= a for a, b in zip(k_grid, k_grid[1:])):
        raise ValueError("k_grid must be increasing")
    out = {}
    for i, k in enumerate(k_grid):
        res = simulate_sampling_distribution(SimulationConfig(mu, k, reps, seed + i), workers)
        out[k] = np.median(np.abs(res.errors[res.ok]), axis=0)
    return out


def loglog_slope(k_grid, errors) -> float:
    """Least-squares slope of ``log(error)`` on ``log(k)``."""
    return float(np.polyfit(np.log(np.asarray(k_grid, dtype=float)),
                            np.log(np.asarray(errors, dtype=float)), 1)[0])


__all__ = [
    "InfeasibleTiltError",
    "SampleFit",
    "SamplingResult",
    "SimulationConfig",
    "consistency_sweep",
    "draws",
    "fit_sample",
    "gaussian_tilt_truth",
    "loglog_slope",
    "sample_fit",
    "simulate_sampling_distribution",
]
