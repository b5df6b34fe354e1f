import numpy as np

from tripeer.rng import Rng


def test_same_seed_stream_reproduces_first_10k_draws():
    a = Rng(123, 7)
    b = Rng(123, 7)
    assert np.array_equal(a.raw(10_000), b.raw(10_000))
    assert np.array_equal(Rng(123, 7).uniform(10_000), Rng(123, 7).uniform(10_000))


def test_distinct_streams_differ():
    base = Rng(5, 0).raw(256)
    for stream in (1, 2, 77):
        assert not np.array_equal(base, Rng(5, stream).raw(256))


def test_distinct_seeds_differ():
    assert not np.array_equal(Rng(1, 0).raw(256), Rng(2, 0).raw(256))


def test_uniform_range_and_moments():
    u = Rng(9, 0).uniform(50_000)
    assert u.min() >= 0.0 and u.max() < 1.0
    assert abs(u.mean() - 0.5) < 0.01
    assert abs(u.var() - 1.0 / 12.0) < 0.005


def test_normal_moments():
    z = Rng(11, 0).normal(50_000)
    assert abs(z.mean()) < 0.02
    assert abs(z.std() - 1.0) < 0.02
    assert np.all(np.isfinite(z))


def test_normal_sigma_scales_exactly():
    a = Rng(4, 2).normal(100, sigma=3.0)
    b = Rng(4, 2).normal(100) * 3.0
    assert np.array_equal(a, b)


def test_permutation_is_a_permutation():
    p = Rng(3, 1).permutation(500)
    assert np.array_equal(np.sort(p), np.arange(500))


def test_subset_without_replacement():
    s = Rng(3, 1).subset(100, 40)
    assert len(set(s.tolist())) == 40
    assert s.min() >= 0 and s.max() < 100


def test_draws_advance_the_counter():
    r = Rng(8, 0)
    first = r.uniform(10)
    second = r.uniform(10)
    assert not np.array_equal(first, second)


def test_derive_matches_fresh_construction():
    assert np.array_equal(Rng(6, 0).derive(9).raw(64), Rng(6, 9).raw(64))
