# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops. Semantics must match dckit._fallback exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()


cdef inline double _dot(const double* a, const double* b, Py_ssize_t d) noexcept nogil:
    # four independent accumulators let the compiler pipeline the loop
    cdef double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0
    cdef Py_ssize_t c = 0
    while c + 4 <= d:
        s0 += a[c] * b[c]
        s1 += a[c + 1] * b[c + 1]
        s2 += a[c + 2] * b[c + 2]
        s3 += a[c + 3] * b[c + 3]
        c += 4
    while c < d:
        s0 += a[c] * b[c]
        c += 1
    return (s0 + s1) + (s2 + s3)


def greedy_unique(const double[:, ::1] unit, double tau):
    """Indices i kept by the sequential scan: dot(unit[i], unit[j]) < tau for every kept j."""
    cdef Py_ssize_t n = unit.shape[0], d = unit.shape[1]
    cdef Py_ssize_t i, j, n_kept = 0
    cdef bint unique
    kept_arr = np.empty(n, dtype=np.int64)
    bank_arr = np.empty((max(n, 1), max(d, 1)), dtype=np.float64)
    cdef cnp.int64_t[::1] kept = kept_arr
    cdef double[:, ::1] bank = bank_arr
    if d == 0:
        # every dot product is zero
        return np.arange(n if tau > 0 else min(n, 1), dtype=np.int64)
    with nogil:
        for i in range(n):
            unique = True
            for j in range(n_kept):
                if _dot(&unit[i, 0], &bank[j, 0], d) >= tau:
                    unique = False
                    break
            if unique:
                bank[n_kept, :] = unit[i, :]
                kept[n_kept] = i
                n_kept += 1
    return kept_arr[:n_kept].copy()


cdef inline double _sqdist(const double[:, ::1] a, Py_ssize_t i,
                           const double[:, ::1] b, Py_ssize_t j, Py_ssize_t d) noexcept nogil:
    cdef double s = 0.0, diff
    cdef Py_ssize_t c
    for c in range(d):
        diff = a[i, c] - b[j, c]
        s = s + diff * diff
    return s


def knn_sq_radii(const double[:, ::1] points, Py_ssize_t k):
    """Squared distance from every point to its k-th nearest other point (self excluded)."""
    cdef Py_ssize_t m = points.shape[0], d = points.shape[1]
    cdef Py_ssize_t i, j, p
    cdef double s
    out_arr = np.empty(m, dtype=np.float64)
    best_arr = np.empty(k, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double[::1] best = best_arr
    with nogil:
        for i in range(m):
            for p in range(k):
                best[p] = INFINITY
            for j in range(m):
                if j == i:
                    continue
                s = _sqdist(points, i, points, j, d)
                if s < best[k - 1]:
                    # insertion into the ascending k-best buffer
                    p = k - 1
                    while p > 0 and best[p - 1] > s:
                        best[p] = best[p - 1]
                        p -= 1
                    best[p] = s
            out[i] = best[k - 1]
    return out_arr


def covered_mask(const double[:, ::1] real, const double[:, ::1] gen, const double[::1] sq_radii):
    """covered[i] is True iff some gen[j] satisfies |real[i] - gen[j]|^2 <= sq_radii[j]."""
    cdef Py_ssize_t n = real.shape[0], m = gen.shape[0], d = real.shape[1]
    cdef Py_ssize_t i, j, c
    cdef double s, diff, r
    out_arr = np.zeros(n, dtype=np.bool_)
    cdef cnp.npy_bool[::1] out = out_arr
    with nogil:
        for i in range(n):
            for j in range(m):
                r = sq_radii[j]
                s = 0.0
                for c in range(d):
                    diff = real[i, c] - gen[j, c]
                    s = s + diff * diff
                    if s > r:
                        break
                if s <= r:
                    out[i] = True
                    break
    return out_arr
