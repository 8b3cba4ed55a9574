"""Compare the compiled kernels against the NumPy fallback.

Run with ``python benchmarks/bench_kernels.py``. Reports the best of a few
repeats for each kernel and backend, plus the largest difference between the
two outputs.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from polylr import _fallback
from polylr.polybasis import build_basis

try:
    from polylr import _kernels
except ImportError:
    _kernels = None


def best_of(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_power_sums(k: int, d: int, n: int, repeat: int):
    x = np.random.default_rng(0).standard_normal((k, d))
    exps = np.array(build_basis(d, 2 * n).order, dtype=np.int64)
    rows = [("power_sums", f"k={k} d={d} 2n={2 * n}", "python",
             best_of(lambda: _fallback.power_sums(x, exps), repeat))]
    if _kernels is not None:
        rows.append(("power_sums", rows[0][1], "compiled",
                     best_of(lambda: _kernels.power_sums(x, exps), repeat)))
        a, b = _kernels.power_sums(x, exps), _fallback.power_sums(x, exps)
        rows.append(("power_sums", rows[0][1], "max rel diff",
                     np.max(np.abs(a - b) / np.maximum(np.abs(b), 1.0))))
    return rows


def bench_paths(n_paths: int, n_steps: int, repeat: int):
    args = (n_paths, n_steps, 0.25 / n_steps, 1.0, 0.05, 0.2, 1.0, 0.05, 0.05, 0, 1)
    label = f"paths={n_paths} steps={n_steps}"
    rows = [("bajd_paths", label, "python", best_of(lambda: _fallback.bajd_paths(*args), repeat))]
    if _kernels is not None:
        rows.append(("bajd_paths", label, "compiled",
                     best_of(lambda: _kernels.bajd_paths(*args), repeat)))
        diff = np.max(np.abs(_kernels.bajd_paths(*args) - _fallback.bajd_paths(*args)))
        rows.append(("bajd_paths", label, "max diff", diff))
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--quick", action="store_true", help="small sizes for a smoke run")
    args = ap.parse_args()
    k, paths = (2_000, 2_000) if args.quick else (200_000, 50_000)
    rows = bench_power_sums(k, 2, 4, args.repeat)
    rows += bench_power_sums(k, 1, 8, args.repeat)
    rows += bench_paths(paths, 125, args.repeat)
    if _kernels is None:
        print("compiled extension not built; fallback timings only")
    for name, label, what, val in rows:
        unit = "" if what.startswith("max") else " s"
        print(f"{name:<11} {label:<26} {what:<12} {val:.4g}{unit}")


if __name__ == "__main__":
    main()
