"""Pure-numpy fallback for the compiled kernels in ``tripeer._kernels``.

Same contracts, same algorithms; the compiled module replaces the Python
loop bodies with C loops.  Integer kernels (DBSCAN expansion) are
bit-identical across backends; the floating-point kernel (Jacobi sweeps)
agrees to rounding because dot products here go through BLAS.
"""

import math

import numpy as np

# Rotate a column pair only when its Gram coupling exceeds 16 ulp relative
# to the column norms: below that, rotations merely re-inject rounding
# noise and a sweep would never come up clean.  (16 * eps)^2 ~= 1.26e-29.
PAIR_GUARD = 1.26e-29


def jacobi_orthogonalize(m, v, max_sweeps):
    """One-sided Jacobi column orthogonalization, in place.

    Applies plane rotations to column pairs of ``m`` (and accumulates them
    in ``v``) until a full sweep performs no rotation; the caller checks the
    returned off-diagonal Gram mass against its convergence tolerance.

    Returns (sweeps_used, off_mass) with off_mass = sum of gamma^2 over the
    final sweep; sweeps_used is -1 when no rotation-free sweep was reached
    within max_sweeps.
    """
    n_cols = m.shape[1]
    off = 0.0
    for sweep in range(max_sweeps):
        off = 0.0
        rotated = False
        for p in range(n_cols - 1):
            for q in range(p + 1, n_cols):
                col_p = m[:, p]
                col_q = m[:, q]
                gamma = float(col_p @ col_q)
                off += gamma * gamma
                alpha = float(col_p @ col_p)
                beta = float(col_q @ col_q)
                if gamma * gamma <= PAIR_GUARD * alpha * beta:
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = math.copysign(1.0, zeta) / (abs(zeta) + math.sqrt(1.0 + zeta * zeta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = c * t
                new_p = c * col_p - s * col_q
                m[:, q] = s * col_p + c * col_q
                m[:, p] = new_p
                vp = v[:, p].copy()
                v[:, p] = c * vp - s * v[:, q]
                v[:, q] = s * vp + c * v[:, q]
        if not rotated:
            return sweep + 1, off
    return -1, off


def dbscan_expand(indptr, indices, core, n_points):
    """Density-reachability expansion over a CSR neighbor graph.

    Seeds clusters from unlabeled core points in ascending index order and
    grows them breadth-first; non-core (border) points are labeled but not
    expanded.  Returns int64 labels with -1 for unreachable points.
    """
    labels = np.full(n_points, -1, dtype=np.int64)
    queue = np.empty(n_points, dtype=np.int64)
    cluster = 0
    for seed in range(n_points):
        if labels[seed] != -1 or not core[seed]:
            continue
        labels[seed] = cluster
        queue[0] = seed
        head, tail = 0, 1
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
    return labels
