"""Finite-difference verification of every loss gradient.

Each check draws random instances, evaluates the loss as a scalar function
of its flattened inputs, and compares the analytic gradient against
central differences.  Instances where a pair-mining or singular-value
decision boundary sits within the difference step are re-drawn, so the
comparison happens at generic points.
"""

from dataclasses import dataclass

import numpy as np

from tripeer.losses import (
    LossWeights,
    MsConfig,
    SmoothingConfig,
    bnm_loss,
    distill_loss,
    id_loss,
    ms_loss,
    source_ce,
    total_loss,
)
from tripeer.numerics import finite_diff_gradient, softmax_rows, svd
from tripeer.rng import Rng

FD_STEP = 1e-5
CE_FAMILY_TOL = 1e-5
ROUGH_TOL = 1e-3

GRADCHECK_TOLERANCES = {
    "source_ce": CE_FAMILY_TOL,
    "id_loss": CE_FAMILY_TOL,
    "distill_loss": CE_FAMILY_TOL,
    "bnm_loss": ROUGH_TOL,
    "ms_loss": ROUGH_TOL,
    "total_loss": ROUGH_TOL,
}


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(float(np.max(np.abs(analytic))), float(np.max(np.abs(numeric))), 1e-10)
    return float(np.max(np.abs(analytic - numeric))) / scale


def _labels(rng: Rng, n: int, n_classes: int, outlier_fraction: float = 0.0) -> np.ndarray:
    labels = np.floor(rng.uniform(n) * n_classes).astype(np.int64)
    labels = np.minimum(labels, n_classes - 1)
    if outlier_fraction > 0.0:
        labels[rng.uniform(n) < outlier_fraction] = -1
    return labels


def check_source_ce(seed: int) -> float:
    rng = Rng(seed, 1)
    b, c = 4 + int(rng.uniform(1)[0] * 4), 3 + int(rng.uniform(1)[0] * 4)
    z = rng.normal(b * c).reshape(b, c)
    labels = _labels(rng, b, c)
    _, analytic = source_ce(z, labels)
    numeric = finite_diff_gradient(
        lambda v: source_ce(v.reshape(b, c), labels)[0], z.ravel(), FD_STEP
    )
    return relative_error(analytic.ravel(), numeric)


def check_id_loss(seed: int) -> float:
    rng = Rng(seed, 2)
    b, c = 4 + int(rng.uniform(1)[0] * 4), 3 + int(rng.uniform(1)[0] * 4)
    cfg = SmoothingConfig(epsilon=0.05 + 0.2 * rng.uniform(1)[0])
    z = rng.normal(b * c).reshape(b, c)
    labels = _labels(rng, b, c)
    _, analytic = id_loss(z, labels, cfg)
    numeric = finite_diff_gradient(
        lambda v: id_loss(v.reshape(b, c), labels, cfg)[0], z.ravel(), FD_STEP
    )
    return relative_error(analytic.ravel(), numeric)


def check_distill_loss(seed: int) -> float:
    rng = Rng(seed, 3)
    b, c = 4 + int(rng.uniform(1)[0] * 3), 3 + int(rng.uniform(1)[0] * 3)
    students = [rng.normal(b * c).reshape(b, c) for _ in range(3)]
    teachers = [rng.normal(b * c).reshape(b, c) for _ in range(3)]
    _, analytic = distill_loss(students, teachers)

    def f(v):
        blocks = v.reshape(3, b, c)
        return distill_loss([blocks[k] for k in range(3)], teachers)[0]

    numeric = finite_diff_gradient(f, np.stack(students).ravel(), FD_STEP)
    return relative_error(np.stack(analytic).ravel(), numeric)


def _sigma_gap_ok(a: np.ndarray) -> bool:
    sigma = svd(a).sigma
    if sigma[0] <= 0.0:
        return False
    gaps = np.diff(sigma)
    return bool(np.all(-gaps > 1e-4 * sigma[0]) and sigma[-1] > 1e-4 * sigma[0])


def check_bnm_loss(seed: int) -> float:
    rng = Rng(seed, 4)
    b, c = 5 + int(rng.uniform(1)[0] * 3), 3 + int(rng.uniform(1)[0] * 3)
    while True:
        students = [rng.normal(b * c).reshape(b, c) for _ in range(3)]
        if all(_sigma_gap_ok(softmax_rows(z)) for z in students):
            break
    teachers = [rng.normal(b * c).reshape(b, c) for _ in range(3)]
    _, analytic = bnm_loss(students, teachers)

    def f(v):
        blocks = v.reshape(3, b, c)
        return bnm_loss([blocks[k] for k in range(3)], teachers)[0]

    numeric = finite_diff_gradient(f, np.stack(students).ravel(), FD_STEP)
    return relative_error(np.stack(analytic).ravel(), numeric)


def _ms_instance(seed: int):
    rng = Rng(seed, 5)
    n_images = 3 + int(rng.uniform(1)[0] * 3)
    d = 4 + int(rng.uniform(1)[0] * 4)
    cfg = MsConfig()
    feats = rng.normal(3 * n_images * d).reshape(3 * n_images, d)
    norms = np.sqrt(np.sum(feats * feats, axis=1, keepdims=True))
    feats = feats / norms
    ids = np.tile(np.arange(n_images), 3)
    labels_img = _labels(rng, n_images, max(2, n_images // 2), outlier_fraction=0.2)
    labels = np.tile(labels_img, 3)
    return feats, ids, labels, cfg


def _ms_mining_is_generic(feats, ids, labels, cfg, slack: float = 1e-3) -> bool:
    """Reject instances whose mining thresholds sit within ``slack`` of a
    candidate similarity (finite differences would flip the selected sets)."""
    sim = feats @ feats.T
    n = feats.shape[0]
    not_self = ~np.eye(n, dtype=bool)
    same_image = (ids[:, None] == ids[None, :]) & not_self
    clustered = labels >= 0
    both = clustered[:, None] & clustered[None, :]
    same_label = (labels[:, None] == labels[None, :]) & both
    pos = same_image | (same_label & not_self) if cfg.use_pseudo_positives else same_image
    neg = both & (labels[:, None] != labels[None, :])
    for i in range(n):
        if pos[i].any() and neg[i].any():
            thr_neg = sim[i][pos[i]].min() - cfg.mining_eps
            thr_pos = sim[i][neg[i]].max() + cfg.mining_eps
            if np.min(np.abs(sim[i][neg[i]] - thr_neg)) < slack:
                return False
            if np.min(np.abs(sim[i][pos[i]] - thr_pos)) < slack:
                return False
    return True


def check_ms_loss(seed: int) -> float:
    attempt = seed
    while True:
        feats, ids, labels, cfg = _ms_instance(attempt)
        if _ms_mining_is_generic(feats, ids, labels, cfg):
            break
        attempt += 1000
    _, analytic = ms_loss(feats, ids, labels, cfg)
    shape = feats.shape
    numeric = finite_diff_gradient(
        lambda v: ms_loss(v.reshape(shape), ids, labels, cfg)[0], feats.ravel(), FD_STEP
    )
    return relative_error(analytic.ravel(), numeric)


def check_total_loss(seed: int) -> float:
    """Composite check: total loss as a function of all (z, h) blocks."""
    rng = Rng(seed, 6)
    b, c, d = 4, 4, 5
    weights = LossWeights(xi=0.4, lambda_bnm=0.7, eta_ms=1.3)
    smoothing = SmoothingConfig(epsilon=0.1)
    ms_cfg = MsConfig()
    labels = _labels(rng, b, c)
    teachers = [rng.normal(b * c).reshape(b, c) for _ in range(3)]
    ids = np.tile(np.arange(b), 3)
    row_labels = np.tile(labels, 3)

    attempt = 0
    while True:
        z_blocks = [rng.normal(b * c).reshape(b, c) for _ in range(3)]
        h = rng.normal(3 * b * d).reshape(3 * b, d)
        h = h / np.sqrt(np.sum(h * h, axis=1, keepdims=True))
        if _ms_mining_is_generic(h, ids, row_labels, ms_cfg) and all(
            _sigma_gap_ok(softmax_rows(z)) for z in z_blocks
        ):
            break
        attempt += 1
        if attempt > 50:
            raise RuntimeError("could not find a generic total-loss instance")

    def compute(z_list, h_stack):
        id_value = 0.0
        id_dz = []
        for k in range(3):
            value, grad = id_loss(z_list[k], labels, smoothing)
            id_value += value
            id_dz.append(grad)
        dt = distill_loss(z_list, teachers)
        bnm = bnm_loss(z_list, teachers)
        value, grad = ms_loss(h_stack, ids, row_labels, ms_cfg)
        ms = (value, [grad[k * b : (k + 1) * b] for k in range(3)])
        return total_loss(
            weights, b, c, d, id_term=(id_value, id_dz), dt_term=dt, bnm_term=bnm, ms_term=ms
        )

    report = compute(z_blocks, h)
    analytic = np.concatenate(
        [np.stack(report.dz).ravel(), np.concatenate(report.dh, axis=0).ravel()]
    )

    z_size = 3 * b * c

    def f(v):
        z_list = [v[:z_size].reshape(3, b, c)[k] for k in range(3)]
        h_stack = v[z_size:].reshape(3 * b, d)
        return compute(z_list, h_stack).total

    flat = np.concatenate([np.stack(z_blocks).ravel(), h.ravel()])
    numeric = finite_diff_gradient(f, flat, FD_STEP)
    return relative_error(analytic, numeric)


CHECKS = {
    "source_ce": check_source_ce,
    "id_loss": check_id_loss,
    "distill_loss": check_distill_loss,
    "bnm_loss": check_bnm_loss,
    "ms_loss": check_ms_loss,
    "total_loss": check_total_loss,
}


@dataclass
class GradcheckResult:
    name: str
    max_rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def run_all(n_instances: int = 20, base_seed: int = 0) -> list:
    results = []
    for name, check in CHECKS.items():
        worst = 0.0
        for i in range(n_instances):
            worst = max(worst, check(base_seed + i))
        results.append(
            GradcheckResult(name=name, max_rel_error=worst, tolerance=GRADCHECK_TOLERANCES[name])
        )
    return results
