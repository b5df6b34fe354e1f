# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: one-sided Jacobi sweeps and DBSCAN expansion.

Mirrors tripeer._kernels_py; see that module for the contracts.
"""

import numpy as np

from libc.math cimport copysign, fabs, sqrt

DEF PAIR_GUARD = 1.26e-29  # (16 * eps)^2; couplings below are rounding noise


def jacobi_orthogonalize(double[:, ::1] m, double[:, ::1] v, int max_sweeps):
    cdef Py_ssize_t n_rows = m.shape[0]
    cdef Py_ssize_t n_cols = m.shape[1]
    cdef Py_ssize_t n_v = v.shape[0]
    cdef Py_ssize_t p, q, i
    cdef int sweep
    cdef bint rotated
    cdef double off, gamma, alpha, beta, zeta, t, c, s, mp, mq, vp, vq

    off = 0.0
    for sweep in range(max_sweeps):
        off = 0.0
        rotated = False
        for p in range(n_cols - 1):
            for q in range(p + 1, n_cols):
                gamma = 0.0
                alpha = 0.0
                beta = 0.0
                for i in range(n_rows):
                    mp = m[i, p]
                    mq = m[i, q]
                    gamma += mp * mq
                    alpha += mp * mp
                    beta += mq * mq
                off += gamma * gamma
                if gamma * gamma <= PAIR_GUARD * alpha * beta:
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = copysign(1.0, zeta) / (fabs(zeta) + sqrt(1.0 + zeta * zeta))
                c = 1.0 / sqrt(1.0 + t * t)
                s = c * t
                for i in range(n_rows):
                    mp = m[i, p]
                    mq = m[i, q]
                    m[i, p] = c * mp - s * mq
                    m[i, q] = s * mp + c * mq
                for i in range(n_v):
                    vp = v[i, p]
                    vq = v[i, q]
                    v[i, p] = c * vp - s * vq
                    v[i, q] = s * vp + c * vq
        if not rotated:
            return sweep + 1, off
    return -1, off


def dbscan_expand(long long[::1] indptr, long long[::1] indices, unsigned char[::1] core, Py_ssize_t n_points):
    labels_arr = np.full(n_points, -1, dtype=np.int64)
    queue_arr = np.empty(n_points, dtype=np.int64)
    cdef long long[::1] labels = labels_arr
    cdef long long[::1] queue = queue_arr
    cdef Py_ssize_t seed, head, tail, point, j, nb
    cdef long long cluster = 0

    for seed in range(n_points):
        if labels[seed] != -1 or not core[seed]:
            continue
        labels[seed] = cluster
        queue[0] = seed
        head = 0
        tail = 1
        while head < tail:
            point = queue[head]
            head += 1
            if not core[point]:
                continue
            for j in range(indptr[point], indptr[point + 1]):
                nb = indices[j]
                if labels[nb] == -1:
                    labels[nb] = cluster
                    queue[tail] = nb
                    tail += 1
        cluster += 1
    return labels_arr
