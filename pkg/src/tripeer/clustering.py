"""View fusion and density clustering for pseudo-label assignment.

Cluster ids are deterministic: seeds are scanned in ascending point order,
neighbor lists are sorted, and border points reachable from several
clusters go to the earliest-created one.
"""

import csv
from dataclasses import dataclass

import numpy as np

from tripeer import _backend
from tripeer.numerics import l2_normalize_rows, require_finite

OUTLIER = -1


@dataclass
class DbscanConfig:
    eps: float = 0.45
    min_pts: int = 4
    metric: str = "cosine"

    def validate(self) -> None:
        if self.eps <= 0.0:
            raise ValueError("eps must be positive")
        if self.min_pts < 2:
            raise ValueError("min_pts must be at least 2")
        if self.metric not in ("cosine", "euclidean"):
            raise ValueError(f"unknown metric {self.metric!r}")


@dataclass
class PseudoLabeling:
    assignment: np.ndarray  # int64, OUTLIER or 0..m_t-1 (first-appearance order)
    m_t: int
    epoch: int = 0


def fuse_views(h1: np.ndarray, h2: np.ndarray, h3: np.ndarray) -> np.ndarray:
    """Elementwise mean of the three view features, L2-normalized per row."""
    if not (h1.shape == h2.shape == h3.shape):
        raise ValueError(f"view shapes differ: {h1.shape}, {h2.shape}, {h3.shape}")
    fused = (h1 + h2 + h3) / 3.0
    if fused.ndim == 1:
        return l2_normalize_rows(fused[None, :])[0]
    return l2_normalize_rows(fused)


def pairwise_distances(points: np.ndarray, metric: str) -> np.ndarray:
    if metric == "cosine":
        unit = l2_normalize_rows(points)
        dist = 1.0 - unit @ unit.T
    else:
        sq = np.sum(points * points, axis=1)
        dist = np.sqrt(np.maximum(sq[:, None] + sq[None, :] - 2.0 * (points @ points.T), 0.0))
    # gemm output is not exactly symmetric; symmetrize for deterministic thresholds
    dist = 0.5 * (dist + dist.T)
    np.fill_diagonal(dist, 0.0)
    return dist


def dbscan(points: np.ndarray, config: DbscanConfig) -> np.ndarray:
    """Classic density clustering; returns per-point labels, OUTLIER = -1."""
    config.validate()
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points[:, None]
    if points.shape[0] < 1:
        raise ValueError("dbscan needs at least one point")
    require_finite(points, "dbscan points")

    dist = pairwise_distances(points, config.metric)
    adjacency = dist <= config.eps
    core = adjacency.sum(axis=1) >= config.min_pts  # self included
    rows, cols = np.nonzero(adjacency)
    indptr = np.zeros(points.shape[0] + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=points.shape[0]), out=indptr[1:])
    return _backend.dbscan_expand(
        indptr, cols.astype(np.int64), core.astype(np.uint8), points.shape[0]
    )


def assign_pseudo_labels(
    fused: np.ndarray, config: DbscanConfig, epoch: int = 0
) -> PseudoLabeling:
    """Cluster fused target features; renumber clusters by first appearance."""
    raw = dbscan(fused, config)
    assignment = np.full_like(raw, OUTLIER)
    remap: dict[int, int] = {}
    for i, label in enumerate(raw):
        if label == OUTLIER:
            continue
        if label not in remap:
            remap[int(label)] = len(remap)
        assignment[i] = remap[int(label)]
    return PseudoLabeling(assignment=assignment, m_t=len(remap), epoch=epoch)


def save_labels_csv(labeling: PseudoLabeling, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_index", "label"])
        for i, label in enumerate(labeling.assignment):
            writer.writerow([i, int(label)])
