# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops: monomial power sums and BAJD Euler paths."""

import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport sqrt, log, cos, exp, M_PI
from libc.stdint cimport uint64_t, int64_t

cnp.import_array()

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL
cdef int SLOTS = 64
cdef int MAX_JUMPS = 61


cdef inline uint64_t mix64(uint64_t z) noexcept nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline double unit(uint64_t key, uint64_t counter) noexcept nogil:
    cdef uint64_t bits = mix64(key + counter * GOLDEN) >> 11
    return (<double>bits + 0.5) * (1.0 / 9007199254740992.0)


def power_sums(const double[:, ::1] x, const int64_t[:, ::1] exps):
    cdef Py_ssize_t k = x.shape[0], d = x.shape[1], m = exps.shape[0]
    cdef Py_ssize_t i, j, a, e
    cdef int maxdeg = 0
    for a in range(m):
        for j in range(d):
            if exps[a, j] > maxdeg:
                maxdeg = exps[a, j]
    out_arr = np.zeros(m)
    cdef double[::1] out = out_arr
    pw_arr = np.empty((d, maxdeg + 1))
    cdef double[:, ::1] pw = pw_arr
    cdef double prod
    for i in range(k):
        for j in range(d):
            pw[j, 0] = 1.0
            for e in range(1, maxdeg + 1):
                pw[j, e] = pw[j, e - 1] * x[i, j]
        for a in range(m):
            prod = 1.0
            for j in range(d):
                prod = prod * pw[j, exps[a, j]]
            out[a] += prod
    return out_arr


cdef double one_path(uint64_t key, int n_steps, double dt, double kappa, double theta,
                     double sigma, double lam, double nu, double y0) noexcept nogil:
    cdef double y = y0, yp, z, u, p, cdf, jump
    cdef double p0 = exp(-lam * dt), rate = lam * dt, sqdt = sqrt(dt)
    cdef int step, count, r
    cdef uint64_t base
    for step in range(n_steps):
        base = <uint64_t>step * SLOTS
        z = sqrt(-2.0 * log(unit(key, base))) * cos(2.0 * M_PI * unit(key, base + 1))
        yp = y if y > 0.0 else 0.0
        y = y + kappa * (theta - yp) * dt + sigma * sqrt(yp) * sqdt * z
        if lam > 0.0:
            u = unit(key, base + 2)
            if u > p0:
                count = 0
                p = p0
                cdf = p0
                while u > cdf and count < MAX_JUMPS:
                    count = count + 1
                    p = p * rate / count
                    cdf = cdf + p
                jump = 0.0
                for r in range(count):
                    jump = jump - nu * log(unit(key, base + 3 + r))
                y = y + jump
    return y if y > 0.0 else 0.0


def bajd_paths(Py_ssize_t n_paths, int n_steps, double dt, double kappa, double theta,
               double sigma, double lam, double nu, double y0, seed, int threads=1):
    cdef uint64_t s = <uint64_t>(int(seed) & 0xFFFFFFFFFFFFFFFF)
    cdef uint64_t base = mix64(s)
    out_arr = np.empty(n_paths)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i
    cdef uint64_t key
    for i in prange(n_paths, nogil=True, num_threads=max(threads, 1), schedule="static"):
        key = mix64(base ^ mix64(<uint64_t>i * GOLDEN + GOLDEN))
        out[i] = one_path(key, n_steps, dt, kappa, theta, sigma, lam, nu, y0)
    return out_arr
