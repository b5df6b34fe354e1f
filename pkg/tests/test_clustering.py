import numpy as np
import pytest

from conftest import load_frozen_fixture
from oracles import dbscan_reference, partition_as_sets
from tripeer.clustering import (
    OUTLIER,
    DbscanConfig,
    assign_pseudo_labels,
    dbscan,
    fuse_views,
    save_labels_csv,
)
from tripeer.rng import Rng


class TestFuseViews:
    def test_identical_vectors(self):
        v = np.array([[3.0, 4.0]])
        fused = fuse_views(v, v, v)
        assert np.allclose(fused, [[0.6, 0.8]])

    def test_arithmetic_example(self):
        h1 = np.array([1.0, 0.0])
        h2 = np.array([0.0, 1.0])
        h3 = np.array([-1.0, 0.0])
        assert np.allclose(fuse_views(h1, h2, h3), [0.0, 1.0])

    def test_permutation_symmetry(self):
        rng = Rng(4, 0)
        h = [rng.normal(10).reshape(2, 5) for _ in range(3)]
        base = fuse_views(h[0], h[1], h[2])
        # symmetric up to summation rounding
        assert np.abs(base - fuse_views(h[2], h[0], h[1])).max() <= 1e-14
        assert np.abs(base - fuse_views(h[1], h[2], h[0])).max() <= 1e-14

    def test_unit_norm_output(self):
        rng = Rng(5, 0)
        h = [rng.normal(40).reshape(8, 5) for _ in range(3)]
        fused = fuse_views(*h)
        assert np.abs(np.linalg.norm(fused, axis=1) - 1.0).max() <= 1e-12

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError):
            fuse_views(np.zeros((2, 3)), np.zeros((2, 3)), np.zeros((2, 4)))


class TestDbscan:
    def test_chain_reachability_one_cluster(self):
        pts = np.array([0.0, 0.1, 0.2])
        labels = dbscan(pts, DbscanConfig(eps=0.15, min_pts=2, metric="euclidean"))
        assert labels.tolist() == [0, 0, 0]

    def test_isolated_point_is_outlier(self):
        pts = np.array([0.0, 0.1, 0.2, 10.0])
        labels = dbscan(pts, DbscanConfig(eps=0.15, min_pts=2, metric="euclidean"))
        assert labels.tolist() == [0, 0, 0, OUTLIER]

    def test_matches_brute_force_reference_seed5(self):
        pts = Rng(5, 0).normal(400).reshape(200, 2)
        labels = dbscan(pts, DbscanConfig(eps=0.2, min_pts=4, metric="euclidean"))
        reference = dbscan_reference(pts, 0.2, 4, "euclidean")
        assert partition_as_sets(labels) == partition_as_sets(reference)

    def test_matches_reference_cosine_metric(self):
        pts = Rng(6, 0).normal(300).reshape(100, 3)
        labels = dbscan(pts, DbscanConfig(eps=0.08, min_pts=3, metric="cosine"))
        reference = dbscan_reference(pts, 0.08, 3, "cosine")
        assert partition_as_sets(labels) == partition_as_sets(reference)

    def test_permutation_robustness(self):
        rng = Rng(7, 0)
        pts = rng.normal(160).reshape(80, 2)
        cfg = DbscanConfig(eps=0.3, min_pts=3, metric="euclidean")
        base = dbscan(pts, cfg)
        perm = rng.permutation(80)
        permuted = dbscan(pts[perm], cfg)
        # undo the permutation and compare as set-of-sets
        restored = np.empty_like(permuted)
        restored[perm] = permuted
        assert partition_as_sets(base) == partition_as_sets(restored)

    def test_every_cluster_has_a_core_point(self):
        rng = Rng(8, 0)
        pts = rng.normal(240).reshape(120, 2)
        cfg = DbscanConfig(eps=0.25, min_pts=4, metric="euclidean")
        labels = dbscan(pts, cfg)
        dist = np.sqrt(((pts[:, None] - pts[None, :]) ** 2).sum(-1))
        core = (dist <= cfg.eps).sum(axis=1) >= cfg.min_pts
        for cluster in range(labels.max() + 1):
            members = labels == cluster
            assert core[members].any()
            assert members.sum() >= 1

    def test_config_validation(self):
        with pytest.raises(ValueError):
            DbscanConfig(eps=0.0).validate()
        with pytest.raises(ValueError):
            DbscanConfig(min_pts=1).validate()
        with pytest.raises(ValueError):
            DbscanConfig(metric="manhattan").validate()


class TestAssignPseudoLabels:
    def test_all_identical_points_one_cluster(self):
        pts = np.ones((6, 4))
        out = assign_pseudo_labels(pts, DbscanConfig(eps=0.1, min_pts=2))
        assert out.m_t == 1
        assert np.array_equal(out.assignment, np.zeros(6, dtype=np.int64))

    def test_vanishing_eps_all_outliers(self):
        pts = Rng(9, 0).normal(40).reshape(10, 4)
        out = assign_pseudo_labels(pts, DbscanConfig(eps=1e-12, min_pts=2))
        assert out.m_t == 0
        assert np.all(out.assignment == OUTLIER)

    def test_labels_renumbered_by_first_appearance(self):
        # two well-separated 1-D blobs; first-appearing blob must be cluster 0
        pts = np.array([[5.0], [5.1], [5.2], [0.0], [0.1], [0.2]])
        out = assign_pseudo_labels(pts, DbscanConfig(eps=0.15, min_pts=2, metric="euclidean"))
        assert out.assignment.tolist() == [0, 0, 0, 1, 1, 1]

    def test_min_cluster_population(self):
        rng = Rng(10, 0)
        pts = rng.normal(300).reshape(150, 2)
        cfg = DbscanConfig(eps=0.3, min_pts=5, metric="euclidean")
        out = assign_pseudo_labels(pts, cfg)
        for cluster in range(out.m_t):
            assert (out.assignment == cluster).sum() >= cfg.min_pts

    def test_csv_dump(self, tmp_path):
        pts = np.array([[0.0], [0.05], [9.0]])
        out = assign_pseudo_labels(pts, DbscanConfig(eps=0.1, min_pts=2, metric="euclidean"))
        path = tmp_path / "labels.csv"
        save_labels_csv(out, path)
        assert path.read_text().splitlines() == [
            "image_index,label",
            "0,0",
            "1,0",
            "2,-1",
        ]


def test_bench_v1_untrained_m_t_regression(bench_data, pretrained_state, bench_config):
    # frozen-seed regression: cluster count over fused views of the
    # pretrained (not yet adapted) encoders on bench-v1 target
    from tripeer import model
    from tripeer.clustering import fuse_views
    from tripeer.rng import Rng as R
    from tripeer.synthdata import augment_batch
    from tripeer.training import CLUSTER_AUGMENT_STREAM

    _, target = bench_data
    ens = pretrained_state.ensemble
    views = []
    for j in range(3):
        xa = augment_batch(target.features, bench_config.augment, R(bench_config.seed, CLUSTER_AUGMENT_STREAM + j))
        h, _, _ = model.encode(ens.students[j].encoder, xa)
        views.append(h)
    out = assign_pseudo_labels(fuse_views(*views), bench_config.dbscan)
    frozen = load_frozen_fixture()
    assert out.m_t == frozen["pretrained_m_t"]
