import numpy as np
import pytest

from oracles import singular_values_by_eig
from tripeer.numerics import (
    finite_diff_gradient,
    l2_normalize_rows,
    log_softmax_rows,
    nuclear_norm,
    nuclear_norm_subgradient,
    softmax_rows,
    svd,
)
from tripeer.rng import Rng


def random_matrix(seed, rows, cols, scale=1.0):
    return Rng(seed, 0).normal(rows * cols, sigma=scale).reshape(rows, cols)


class TestSvd:
    def test_identity(self):
        r = svd(np.eye(2))
        assert np.allclose(r.sigma, [1.0, 1.0])

    def test_diagonal_sorted(self):
        r = svd(np.diag([3.0, 4.0]))
        assert np.allclose(r.sigma, [4.0, 3.0])

    def test_random_5x3_matches_eigensolver_oracle(self):
        a = random_matrix(7, 5, 3)
        assert np.abs(svd(a).sigma - singular_values_by_eig(a)).max() <= 1e-8

    def test_invariants_on_100_random_matrices(self):
        rng = Rng(2024, 1)
        for i in range(100):
            rows = 1 + int(rng.uniform(1)[0] * 64)
            cols = 1 + int(rng.uniform(1)[0] * 64)
            a = rng.normal(rows * cols).reshape(rows, cols)
            r = svd(a)
            k = min(rows, cols)
            assert r.sigma.shape == (k,)
            assert np.all(np.diff(r.sigma) <= 0) and r.sigma[-1] >= 0.0
            recon = r.u @ np.diag(r.sigma) @ r.v.T
            frob = np.sqrt(np.sum(a * a))
            assert np.sqrt(np.sum((recon - a) ** 2)) <= 1e-9 * max(1.0, frob)
            assert np.abs(r.u.T @ r.u - np.eye(k)).max() <= 1e-9
            assert np.abs(r.v.T @ r.v - np.eye(k)).max() <= 1e-9

    def test_wide_matrix(self):
        a = random_matrix(5, 3, 7)
        r = svd(a)
        assert r.u.shape == (3, 3) and r.v.shape == (7, 3)
        assert np.allclose(r.u @ np.diag(r.sigma) @ r.v.T, a, atol=1e-10)

    def test_rank_deficient_orthonormal_completion(self):
        r = svd(np.array([[0.5, 0.5], [0.5, 0.5]]))
        assert np.allclose(r.sigma, [1.0, 0.0], atol=1e-12)
        assert np.abs(r.u.T @ r.u - np.eye(2)).max() <= 1e-12

    def test_zero_matrix(self):
        r = svd(np.zeros((3, 2)))
        assert np.allclose(r.sigma, 0.0)
        assert np.abs(r.u.T @ r.u - np.eye(2)).max() <= 1e-12

    def test_rejects_non_finite_with_index(self):
        a = np.ones((2, 3))
        a[1, 2] = np.nan
        with pytest.raises(ValueError, match=r"\(1, 2\)"):
            svd(a)

    def test_rejects_oversize(self):
        with pytest.raises(ValueError, match="2048"):
            svd(np.zeros((3000, 2)))

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            svd(np.zeros((0, 2)))


class TestNuclearNorm:
    def test_identity(self):
        assert nuclear_norm(np.eye(2)) == pytest.approx(2.0, abs=1e-12)

    def test_rank_one(self):
        assert nuclear_norm([[0.5, 0.5], [0.5, 0.5]]) == pytest.approx(1.0, abs=1e-12)

    def test_random_8x4_matches_oracle(self):
        a = random_matrix(11, 8, 4)
        assert nuclear_norm(a) == pytest.approx(
            float(singular_values_by_eig(a).sum()), abs=1e-8
        )

    def test_permutation_invariance(self):
        rng = Rng(31, 0)
        a = rng.normal(6 * 5).reshape(6, 5)
        p = np.eye(6)[rng.permutation(6)]
        q = np.eye(5)[rng.permutation(5)]
        assert abs(nuclear_norm(p @ a @ q) - nuclear_norm(a)) <= 1e-9

    def test_norm_ordering(self):
        for seed in range(10):
            a = random_matrix(seed, 7, 5)
            frob = float(np.sqrt(np.sum(a * a)))
            spectral = float(svd(a).sigma[0])
            assert nuclear_norm(a) >= frob - 1e-9
            assert frob >= spectral - 1e-9


class TestSubgradient:
    def test_identity(self):
        assert np.allclose(nuclear_norm_subgradient(np.eye(2)), np.eye(2), atol=1e-12)

    def test_diagonal(self):
        g = nuclear_norm_subgradient(np.diag([3.0, 4.0]))
        assert np.allclose(g, np.eye(2), atol=1e-12)

    def test_directional_derivatives_random_6x4(self):
        a = random_matrix(3, 6, 4)
        g = nuclear_norm_subgradient(a)
        h = 1e-5
        rng = Rng(99, 0)
        for _ in range(10):
            direction = rng.normal(a.size).reshape(a.shape)
            numeric = (nuclear_norm(a + h * direction) - nuclear_norm(a - h * direction)) / (2 * h)
            analytic = float(np.sum(g * direction))
            assert numeric == pytest.approx(analytic, rel=1e-4)

    def test_zero_matrix_gives_zero(self):
        assert np.allclose(nuclear_norm_subgradient(np.zeros((3, 2))), 0.0)


class TestSoftmax:
    def test_symmetric_row(self):
        assert np.allclose(softmax_rows([[0.0, 0.0]]), [[0.5, 0.5]])

    def test_shift_invariance(self):
        rng = Rng(17, 0)
        z = rng.normal(12).reshape(3, 4)
        for c in (-5.0, 0.3, 100.0):
            assert np.abs(softmax_rows(z + c) - softmax_rows(z)).max() <= 1e-12

    def test_row_matches_scalar_loop(self):
        row = [1.0, 2.0, 3.0]
        exps = [np.exp(v) for v in row]
        expected = [e / sum(exps) for e in exps]
        assert np.abs(softmax_rows([row])[0] - expected).max() <= 1e-12

    def test_rows_sum_to_one_and_open_interval(self):
        z = Rng(23, 0).normal(40, sigma=30.0).reshape(5, 8)
        p = softmax_rows(z)
        assert np.abs(p.sum(axis=1) - 1.0).max() <= 1e-12
        assert np.all(p > 0.0) and np.all(p < 1.0)

    def test_log_softmax_consistent(self):
        z = Rng(29, 0).normal(30).reshape(5, 6)
        assert np.abs(log_softmax_rows(z) - np.log(softmax_rows(z))).max() <= 1e-10

    def test_extreme_logits_stable(self):
        p = softmax_rows([[1000.0, 0.0], [-1000.0, 0.0]])
        assert np.all(np.isfinite(p))
        assert np.abs(p.sum(axis=1) - 1.0).max() <= 1e-12


class TestFiniteDiff:
    def test_quadratic(self):
        grad = finite_diff_gradient(lambda v: float(np.sum(v * v)), np.array([1.0, 2.0]))
        assert np.allclose(grad, [2.0, 4.0], atol=1e-6)

    def test_constant(self):
        grad = finite_diff_gradient(lambda v: 3.5, np.array([1.0, -2.0, 0.0]))
        assert np.allclose(grad, 0.0)

    def test_non_finite_reports_coordinate(self):
        def f(v):
            return float("nan") if v[1] != 0.5 else 1.0

        with pytest.raises(ValueError, match="coordinate 1"):
            finite_diff_gradient(f, np.array([0.0, 0.5]))


def test_l2_normalize_rows_keeps_zero_rows():
    x = np.array([[3.0, 4.0], [0.0, 0.0]])
    out = l2_normalize_rows(x)
    assert np.allclose(out[0], [0.6, 0.8])
    assert np.allclose(out[1], 0.0)
