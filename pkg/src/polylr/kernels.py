"""Backend selection for the hot loops.

The compiled extension is used when it imports; otherwise the NumPy
fallback. Set ``PLR_BACKEND=python`` to force the fallback.
"""

from __future__ import annotations

import os

from . import _fallback

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

BACKEND = "python"
_impl = _fallback
if _compiled is not None and os.environ.get("PLR_BACKEND", "").lower() != "python":
    BACKEND = "compiled"
    _impl = _compiled


def default_threads() -> int:
    env = os.environ.get("PLR_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def power_sums(x, exps):
    return _impl.power_sums(x, exps)


def bajd_paths(n_paths, n_steps, dt, kappa, theta, sigma, lam, nu, y0, seed, threads=None):
    if threads is None:
        threads = default_threads()
    return _impl.bajd_paths(
        int(n_paths), int(n_steps), float(dt), float(kappa), float(theta),
        float(sigma), float(lam), float(nu), float(y0), int(seed), int(threads),
    )
