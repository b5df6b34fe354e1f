"""Dense numeric primitives: Jacobi SVD, nuclear norm, softmax, finite differences.

Matrices are numpy float64 arrays throughout; every public operation
rejects non-finite input with a diagnostic naming the offending index.
"""

from dataclasses import dataclass
from typing import Callable

import numpy as np

from tripeer import _backend

MAX_SVD_DIM = 2048
# Convergence: off-diagonal Gram mass below this multiple of ||A||_F^2.
JACOBI_MASS_TOL = 1e-14
MAX_JACOBI_SWEEPS = 100
# Singular triplets below this multiple of sigma_max are dropped from the
# nuclear-norm subgradient (numerically zero directions).
SUBGRADIENT_SIGMA_CUTOFF = 1e-10


def require_finite(a: np.ndarray, name: str = "input") -> None:
    if not np.all(np.isfinite(a)):
        bad = np.argwhere(~np.isfinite(np.asarray(a)))[0]
        idx = tuple(int(i) for i in bad)
        raise ValueError(f"{name} has non-finite value at index {idx}")


def as_matrix(a, name: str = "input") -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {a.shape}")
    return a


def l2_normalize_rows(x: np.ndarray) -> np.ndarray:
    """Rows scaled to unit L2 norm; exactly-zero rows stay zero."""
    norms = np.sqrt(np.sum(x * x, axis=1, keepdims=True))
    safe = np.where(norms > 0.0, norms, 1.0)
    return x / safe


@dataclass
class SvdResult:
    u: np.ndarray  # (rows, k), orthonormal columns
    sigma: np.ndarray  # (k,), descending, k = min(rows, cols)
    v: np.ndarray  # (cols, k), orthonormal columns


def _complete_orthonormal(u: np.ndarray, fixed: np.ndarray) -> None:
    """Fill columns flagged in ``fixed==False`` with orthonormal completions."""
    n_rows = u.shape[0]
    for j in np.nonzero(~fixed)[0]:
        basis_cols = u[:, fixed]
        # basis vector least covered by the columns fixed so far
        coverage = np.sum(basis_cols * basis_cols, axis=1)
        b = int(np.argmin(coverage))
        cand = np.zeros(n_rows)
        cand[b] = 1.0
        for _ in range(2):
            cand -= basis_cols @ (basis_cols.T @ cand)
        cand /= np.sqrt(cand @ cand)
        u[:, j] = cand
        fixed[j] = True


def svd(a) -> SvdResult:
    """Singular value decomposition by one-sided Jacobi rotations.

    Returns U, sigma (descending), V with a = U diag(sigma) V^T; U and V
    have orthonormal columns.  Intended for small dense matrices (both
    dimensions at most 2048).
    """
    a = as_matrix(a)
    rows, cols = a.shape
    if rows == 0 or cols == 0:
        raise ValueError("svd requires a non-empty matrix")
    if rows > MAX_SVD_DIM or cols > MAX_SVD_DIM:
        raise ValueError(f"svd supports dimensions up to {MAX_SVD_DIM}, got {a.shape}")
    require_finite(a, "svd input")

    transposed = rows < cols
    work = np.ascontiguousarray(a.T.copy() if transposed else a.copy())
    n, k = work.shape
    accum = np.eye(k)
    frob_sq = float(np.sum(work * work))
    sweeps, off_mass = _backend.jacobi_orthogonalize(work, accum, MAX_JACOBI_SWEEPS)
    if sweeps < 0:
        raise ArithmeticError("jacobi svd did not converge")
    if np.sqrt(2.0 * off_mass) > JACOBI_MASS_TOL * frob_sq:
        raise ArithmeticError("jacobi svd left excessive off-diagonal Gram mass")

    sigma = np.sqrt(np.sum(work * work, axis=0))
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    work = work[:, order]
    accum = accum[:, order]

    sigma_max = sigma[0] if k else 0.0
    zero_tol = max(n, k) * np.finfo(np.float64).eps * sigma_max
    fixed = sigma > zero_tol
    u = np.zeros_like(work)
    u[:, fixed] = work[:, fixed] / sigma[fixed]
    _complete_orthonormal(u, fixed.copy())
    sigma = np.where(fixed, sigma, 0.0)

    if transposed:
        return SvdResult(u=accum, sigma=sigma, v=u)
    return SvdResult(u=u, sigma=sigma, v=accum)


def nuclear_norm(a) -> float:
    """Sum of singular values."""
    return float(np.sum(svd(a).sigma))


def nuclear_norm_subgradient(a) -> np.ndarray:
    """U V^T over singular triplets with sigma above the relative cutoff.

    A valid subgradient of the nuclear norm at ``a``; exact gradient when
    the nonzero singular values are simple.
    """
    result = svd(a)
    if result.sigma[0] <= 0.0:
        return np.zeros(np.shape(a))
    keep = result.sigma > SUBGRADIENT_SIGMA_CUTOFF * result.sigma[0]
    return result.u[:, keep] @ result.v[:, keep].T


def softmax_rows(z) -> np.ndarray:
    """Row-wise softmax with max-shift for stability."""
    z = as_matrix(z, "logits")
    require_finite(z, "logits")
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax_rows(z) -> np.ndarray:
    z = as_matrix(z, "logits")
    require_finite(z, "logits")
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def finite_diff_gradient(
    f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient of a scalar function of a vector."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.empty_like(x)
    for i in range(x.size):
        step = np.zeros_like(x)
        step.flat[i] = h
        f_plus = float(f(x + step))
        f_minus = float(f(x - step))
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise ValueError(f"non-finite function value at coordinate {i}")
        grad.flat[i] = (f_plus - f_minus) / (2.0 * h)
    return grad
