"""Pure NumPy versions of the compiled kernels in ``_kernels.pyx``.

Both backends draw uniforms from the same counter-based stream, so the
simulated paths agree up to libm rounding in ``log``/``cos``.
"""

from __future__ import annotations

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
SLOTS = 64  # counters reserved per time step: normal (2), jump count (1), jump sizes
MAX_JUMPS = SLOTS - 3
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30, _S27, _S31, _S11 = (np.uint64(v) for v in (30, 27, 31, 11))


def mix64(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.uint64)
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def path_keys(seed: int, paths: np.ndarray) -> np.ndarray:
    base = mix64(np.array([seed & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64))
    return mix64(base ^ mix64(paths.astype(np.uint64) * GOLDEN + GOLDEN))


def uniforms(keys: np.ndarray, counter: int) -> np.ndarray:
    c = np.uint64((counter * int(GOLDEN)) & 0xFFFFFFFFFFFFFFFF)
    bits = mix64(keys + c) >> _S11
    return (bits.astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)


def power_sums(x: np.ndarray, exps: np.ndarray) -> np.ndarray:
    k, d = x.shape
    maxdeg = int(exps.max()) if exps.size else 0
    out = np.zeros(exps.shape[0])
    chunk = 65536
    for start in range(0, k, chunk):
        xc = x[start : start + chunk]
        powers = np.empty(xc.shape + (maxdeg + 1,))
        powers[..., 0] = 1.0
        for e in range(1, maxdeg + 1):
            powers[..., e] = powers[..., e - 1] * xc
        prod = np.ones((xc.shape[0], exps.shape[0]))
        for j in range(d):
            prod *= powers[:, j, exps[:, j]]
        out += prod.sum(axis=0)
    return out


def bajd_paths(
    n_paths: int,
    n_steps: int,
    dt: float,
    kappa: float,
    theta: float,
    sigma: float,
    lam: float,
    nu: float,
    y0: float,
    seed: int,
    threads: int = 1,
) -> np.ndarray:
    keys = path_keys(seed, np.arange(n_paths, dtype=np.uint64))
    y = np.full(n_paths, float(y0))
    p0 = np.exp(-lam * dt)
    sqdt = np.sqrt(dt)
    for step in range(n_steps):
        base = step * SLOTS
        u0 = uniforms(keys, base)
        u1 = uniforms(keys, base + 1)
        z = np.sqrt(-2.0 * np.log(u0)) * np.cos(2.0 * np.pi * u1)
        yp = np.maximum(y, 0.0)
        y = y + kappa * (theta - yp) * dt + sigma * np.sqrt(yp) * sqdt * z
        if lam > 0.0:
            u2 = uniforms(keys, base + 2)
            hit = np.flatnonzero(u2 > p0)
            if hit.size:
                y[hit] += _jumps(keys[hit], u2[hit], base, lam * dt, p0, nu)
    return np.maximum(y, 0.0)


def _jumps(keys, u, base, rate, p0, nu):
    # inverse-CDF Poisson count, then a sum of exponential sizes
    count = np.zeros(u.shape[0], dtype=np.int64)
    p = np.full(u.shape[0], p0)
    cdf = p.copy()
    active = u > cdf
    while active.any():
        count[active] += 1
        p[active] *= rate / count[active]
        cdf[active] += p[active]
        active &= (u > cdf) & (count < MAX_JUMPS)
    total = np.zeros(u.shape[0])
    for r in range(int(count.max())):
        sel = count > r
        total[sel] -= nu * np.log(uniforms(keys[sel], base + 3 + r))
    return total
