"""Training objectives and their analytic gradients.

Five terms: source cross entropy, multi-similarity metric loss,
label-smoothed identity loss on pseudo labels, cyclic soft-label
distillation, and batch nuclear-norm maximization.  Each returns its value
together with gradients w.r.t. its feature/logit inputs; teacher inputs
never receive gradients.
"""

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from tripeer.numerics import log_softmax_rows, require_finite, softmax_rows, svd

# cyclic soft-label routing: student k learns from this teacher's view
TEACHER_FOR_STUDENT = (2, 0, 1)

# singular triplets below this relative size are excluded from the
# nuclear-norm gradient (mirrors numerics.SUBGRADIENT_SIGMA_CUTOFF)
_SIGMA_CUTOFF = 1e-10


@dataclass
class MsConfig:
    alpha: float = 2.0  # positive-pair scaling
    beta: float = 40.0  # negative-pair scaling
    margin: float = 0.5  # similarity offset
    mining_eps: float = 0.1  # pair-mining slack
    use_pseudo_positives: bool = True  # same-cluster images count as positives

    def validate(self) -> None:
        if self.alpha <= 0.0 or self.beta <= 0.0:
            raise ValueError("alpha and beta must be positive")
        if not -1.0 <= self.margin <= 1.0:
            raise ValueError("margin must be in [-1, 1] for cosine similarities")


@dataclass
class SmoothingConfig:
    epsilon: float = 0.1

    def validate(self) -> None:
        if not 0.0 <= self.epsilon < 1.0:
            raise ValueError("label-smoothing epsilon must be in [0, 1)")


@dataclass
class LossWeights:
    xi: float = 0.5  # identity vs distillation balance
    lambda_bnm: float = 1.5
    eta_ms: float = 3.0

    def validate(self) -> None:
        if not 0.0 < self.xi < 1.0:
            raise ValueError("xi must be strictly inside (0, 1)")
        if self.lambda_bnm < 0.0 or self.eta_ms < 0.0:
            raise ValueError("lambda_bnm and eta_ms must be non-negative")


@dataclass
class LossReport:
    id_value: float
    dt_value: float
    bnm_value: float
    ms_value: float
    total: float
    dh: list  # per peer, (B, d_feat)
    dz: list  # per peer, (B, n_classes)
    xi_used: float

    def values_json(self, **extra) -> str:
        record = {
            "l_id": self.id_value,
            "l_dt": self.dt_value,
            "l_bnm": self.bnm_value,
            "l_ms": self.ms_value,
            "total": self.total,
        }
        record.update(extra)
        return json.dumps(record, sort_keys=True)


def _soft_ce(logits: np.ndarray, targets: np.ndarray):
    """Mean cross entropy against per-row target distributions (rows sum to 1)."""
    n = logits.shape[0]
    logp = log_softmax_rows(logits)
    value = float(-np.sum(targets * logp) / n)
    grad = (softmax_rows(logits) - targets) / n
    return value, grad


def source_ce(logits: np.ndarray, labels: np.ndarray):
    """Mean cross entropy on hard labels; gradient (softmax - onehot)/B."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1 or labels.shape[0] != logits.shape[0]:
        raise ValueError("labels must be one index per logits row")
    n_classes = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        bad = labels[(labels < 0) | (labels >= n_classes)][0]
        raise ValueError(f"label {bad} out of range for {n_classes} classes")
    onehot = np.zeros_like(logits)
    onehot[np.arange(labels.shape[0]), labels] = 1.0
    return _soft_ce(logits, onehot)


def id_loss(logits: np.ndarray, labels: np.ndarray, config: SmoothingConfig):
    """Label-smoothed cross entropy on pseudo labels.

    The true class gets mass 1 - eps + eps/m_t, every class gets eps/m_t.
    The caller excludes outlier rows; m_t is the logits width.
    """
    config.validate()
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    m_t = logits.shape[1]
    if m_t < 2:
        raise ValueError("identity loss needs at least 2 pseudo classes")
    if labels.size and (labels.min() < 0 or labels.max() >= m_t):
        raise ValueError("pseudo label out of range")
    targets = np.full_like(logits, config.epsilon / m_t)
    targets[np.arange(labels.shape[0]), labels] += 1.0 - config.epsilon
    return _soft_ce(logits, targets)


def distill_loss(student_logits: list, teacher_logits: list):
    """Cyclic soft-label cross entropy: student k learns from teacher (k-1) mod 3.

    Teachers contribute targets only; returned gradients cover student
    logits and the implied teacher gradients are identically zero.
    """
    if len(student_logits) != 3 or len(teacher_logits) != 3:
        raise ValueError("distill_loss expects three student and three teacher blocks")
    value = 0.0
    grads = []
    for k in range(3):
        z_s = np.asarray(student_logits[k], dtype=np.float64)
        z_t = np.asarray(teacher_logits[TEACHER_FOR_STUDENT[k]], dtype=np.float64)
        if z_s.shape != z_t.shape:
            raise ValueError(f"peer {k}: student/teacher logits shapes differ")
        term, grad = _soft_ce(z_s, softmax_rows(z_t))
        value += term
        grads.append(grad)
    return value, grads


def _nuclear_norm_and_grad(a: np.ndarray):
    result = svd(a)
    value = float(np.sum(result.sigma))
    if result.sigma[0] <= 0.0:
        return value, np.zeros_like(a)
    keep = result.sigma > _SIGMA_CUTOFF * result.sigma[0]
    return value, result.u[:, keep] @ result.v[:, keep].T


def bnm_loss(student_logits: list, teacher_logits: Optional[list]):
    """Negated, batch-normalized nuclear norms of the prediction matrices.

    Value: -(sum_k ||softmax(z_k)||_* + sum_k ||softmax(z_k,teacher)||_*) / B.
    Gradients flow only through student matrices; teacher terms are
    value-only (pass None to drop them entirely).
    """
    if len(student_logits) != 3:
        raise ValueError("bnm_loss expects three student logit blocks")
    batch = np.asarray(student_logits[0]).shape[0]
    value = 0.0
    grads = []
    for z in student_logits:
        z = np.asarray(z, dtype=np.float64)
        a = softmax_rows(z)
        norm, sub = _nuclear_norm_and_grad(a)
        value -= norm / batch
        # chain through the softmax Jacobian, row by row
        inner = np.sum(a * sub, axis=1, keepdims=True)
        grads.append(-(a * sub - a * inner) / batch)
    if teacher_logits is not None:
        for z in teacher_logits:
            a = softmax_rows(np.asarray(z, dtype=np.float64))
            value -= _nuclear_norm_and_grad(a)[0] / batch
    return value, grads


def ms_loss(features: np.ndarray, image_ids: np.ndarray, labels: np.ndarray, config: MsConfig):
    """Multi-similarity loss over the 3B view features of one batch.

    Positives of an anchor: other views of its image, plus views of images
    sharing its pseudo label.  Negatives: views of images whose pseudo
    labels differ (outlier images join no negative pairs).  Mining keeps
    negatives above min-positive-similarity - eps and positives below
    max-negative-similarity + eps; the filter applies only when the
    opposing candidate set is non-empty.
    """
    config.validate()
    features = np.asarray(features, dtype=np.float64)
    image_ids = np.asarray(image_ids, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    require_finite(features, "ms features")
    n = features.shape[0]
    if image_ids.shape != (n,) or labels.shape != (n,):
        raise ValueError("image_ids and labels must have one entry per feature row")

    sim = features @ features.T
    not_self = ~np.eye(n, dtype=bool)
    same_image = (image_ids[:, None] == image_ids[None, :]) & not_self
    clustered = labels >= 0
    both = clustered[:, None] & clustered[None, :]
    same_label = (labels[:, None] == labels[None, :]) & both
    if config.use_pseudo_positives:
        pos_cand = same_image | (same_label & not_self)
    else:
        pos_cand = same_image
    neg_cand = both & (labels[:, None] != labels[None, :])

    has_pos = pos_cand.any(axis=1)
    has_neg = neg_cand.any(axis=1)
    min_pos = np.where(pos_cand, sim, np.inf).min(axis=1)
    max_neg = np.where(neg_cand, sim, -np.inf).max(axis=1)
    keep_neg = neg_cand & np.where(
        has_pos[:, None], sim > (min_pos - config.mining_eps)[:, None], True
    )
    keep_pos = pos_cand & np.where(
        has_neg[:, None], sim < (max_neg + config.mining_eps)[:, None], True
    )

    exp_pos = np.where(keep_pos, np.exp(-config.alpha * (sim - config.margin)), 0.0)
    exp_neg = np.where(keep_neg, np.exp(config.beta * (sim - config.margin)), 0.0)
    sum_pos = exp_pos.sum(axis=1)
    sum_neg = exp_neg.sum(axis=1)
    value = float(
        np.mean(np.log1p(sum_pos) / config.alpha + np.log1p(sum_neg) / config.beta)
    )

    weights = exp_neg / (1.0 + sum_neg)[:, None] - exp_pos / (1.0 + sum_pos)[:, None]
    grad = (weights + weights.T) @ features / n
    return value, grad


def total_loss(
    weights: LossWeights,
    batch_size: int,
    n_classes: int,
    d_feat: int,
    id_term=None,
    dt_term=None,
    bnm_term=None,
    ms_term=None,
) -> LossReport:
    """Weighted composition; a missing identity term shifts its mass to
    distillation (xi treated as 0 for the batch)."""
    xi = weights.xi if id_term is not None else 0.0
    z_zero = [np.zeros((batch_size, n_classes)) for _ in range(3)]
    h_zero = [np.zeros((batch_size, d_feat)) for _ in range(3)]

    id_value, id_dz = id_term if id_term is not None else (0.0, z_zero)
    dt_value, dt_dz = dt_term if dt_term is not None else (0.0, z_zero)
    bnm_value, bnm_dz = bnm_term if bnm_term is not None else (0.0, z_zero)
    ms_value, ms_dh = ms_term if ms_term is not None else (0.0, h_zero)

    total = (
        xi * id_value
        + (1.0 - xi) * dt_value
        + weights.lambda_bnm * bnm_value
        + weights.eta_ms * ms_value
    )
    dz = [
        xi * id_dz[k] + (1.0 - xi) * dt_dz[k] + weights.lambda_bnm * bnm_dz[k]
        for k in range(3)
    ]
    dh = [weights.eta_ms * ms_dh[k] for k in range(3)]
    return LossReport(
        id_value=id_value,
        dt_value=dt_value,
        bnm_value=bnm_value,
        ms_value=ms_value,
        total=total,
        dh=dh,
        dz=dz,
        xi_used=xi,
    )
