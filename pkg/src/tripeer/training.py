"""Two-stage training: supervised source pretraining, then adaptation on the
unlabeled target domain (per-epoch clustering + mini-batch optimization of
the composite loss with EMA teacher updates).

Every random draw comes from a documented (seed, stream) pair, so a run is
a pure function of its config; see README for the stream table.
"""

import copy
import dataclasses
import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from tripeer import model
from tripeer.clustering import (
    OUTLIER,
    DbscanConfig,
    PseudoLabeling,
    assign_pseudo_labels,
    fuse_views,
)
from tripeer.losses import (
    LossReport,
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
from tripeer.rng import Rng
from tripeer.synthdata import UNLABELED, AugmentSpec, Dataset, augment_batch

ABLATIONS = ("no_id", "no_dt", "no_bnm", "no_ms", "no_ema")

# Rng stream table (seed = config.seed unless stated otherwise):
#   100 + k   peer initialization (model.make_ensemble)
#   200 + k   per-peer source-epoch shuffling
#   300       adaptation shuffling
#   400 + j   view-slot j augmentation for the clustering pass
#   500 + j   view-slot j augmentation for training batches
#   600 + k   head re-initialization draws
PRETRAIN_SHUFFLE_STREAM = 200
ADAPT_SHUFFLE_STREAM = 300
CLUSTER_AUGMENT_STREAM = 400
BATCH_AUGMENT_STREAM = 500
REINIT_STREAM = 600


@dataclass
class TrainConfig:
    d_hidden: int = 64
    d_feat: int = 32
    batch_size: int = 64
    source_epochs: int = 20
    source_milestones: tuple = (10, 17)
    adapt_epochs: int = 10
    lr: float = 0.00035
    weight_decay: float = 0.0005
    rho: float = 0.999
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 42
    keep_peer: int = 0
    keep_teacher: bool = True
    weights: LossWeights = field(default_factory=LossWeights)
    ms: MsConfig = field(default_factory=MsConfig)
    smoothing: SmoothingConfig = field(default_factory=SmoothingConfig)
    dbscan: DbscanConfig = field(default_factory=DbscanConfig)
    augment: AugmentSpec = field(default_factory=AugmentSpec)

    def validate(self) -> None:
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")
        if self.source_epochs < 1 or self.adapt_epochs < 1:
            raise ValueError("epoch counts must be at least 1")
        if self.lr <= 0.0:
            raise ValueError("lr must be positive")
        if not 0.0 <= self.rho < 1.0:
            raise ValueError("rho must be in [0, 1)")
        if self.d_hidden < 1 or self.d_feat < 1:
            raise ValueError("model widths must be positive")
        if not 0 <= self.keep_peer <= 2:
            raise ValueError("keep_peer must be 0, 1, or 2")
        self.weights.validate()
        self.ms.validate()
        self.smoothing.validate()
        self.dbscan.validate()
        self.augment.validate()


def _config_entries(cfg, prefix: str = ""):
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        name = f"{prefix}{f.name}"
        if dataclasses.is_dataclass(value):
            yield from _config_entries(value, prefix=f"{name}.")
        else:
            yield name, cfg, f.name, value


def config_to_text(cfg: TrainConfig) -> str:
    lines = []
    for name, _, _, value in _config_entries(cfg):
        if isinstance(value, tuple):
            rendered = ",".join(str(v) for v in value)
        elif isinstance(value, bool):
            rendered = "true" if value else "false"
        elif isinstance(value, float):
            rendered = repr(value)
        else:
            rendered = str(value)
        lines.append(f"{name} = {rendered}")
    return "\n".join(lines) + "\n"


def _parse_value(text: str, current):
    if isinstance(current, bool):
        lowered = text.lower()
        if lowered in ("true", "1", "yes"):
            return True
        if lowered in ("false", "0", "no"):
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    if isinstance(current, int):
        return int(text)
    if isinstance(current, float):
        return float(text)
    if isinstance(current, tuple):
        return tuple(int(part) for part in text.split(",") if part.strip() != "")
    return text


def config_from_text(text: str, base: Optional[TrainConfig] = None) -> TrainConfig:
    """Flat ``key = value`` config; unknown keys are rejected by name."""
    cfg = copy.deepcopy(base) if base is not None else TrainConfig()
    entries = {name: (holder, attr) for name, holder, attr, _ in _config_entries(cfg)}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {line_no}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in entries:
            raise ValueError(f"unknown config key {key!r}")
        holder, attr = entries[key]
        try:
            setattr(holder, attr, _parse_value(value, getattr(holder, attr)))
        except ValueError as exc:
            raise ValueError(f"config key {key!r}: {exc}") from None
    cfg.validate()
    return cfg


def load_config(path, base: Optional[TrainConfig] = None) -> TrainConfig:
    with open(path, encoding="utf-8") as fh:
        return config_from_text(fh.read(), base=base)


@dataclass
class RunState:
    ensemble: model.PeerEnsemble
    adam: list  # 3 x AdamState
    epoch: int = 0
    iteration: int = 0
    pseudo: Optional[PseudoLabeling] = None
    history: list = field(default_factory=list)
    label_map: Optional[np.ndarray] = None  # source identity remap used in pretraining


@dataclass
class IterationRecord:
    iteration: int
    epoch: int
    report: LossReport
    student_logits: list
    teacher_logits: list
    batch_indices: np.ndarray
    ensemble: model.PeerEnsemble


def _batches(perm: np.ndarray, batch_size: int) -> list:
    chunks = [perm[i : i + batch_size] for i in range(0, len(perm), batch_size)]
    if len(chunks) > 1 and len(chunks[-1]) < 2:
        chunks[-2] = np.concatenate([chunks[-2], chunks[-1]])
        chunks.pop()
    return chunks


def _lr_factor(epoch: int, milestones) -> float:
    return 0.1 ** sum(1 for m in milestones if epoch >= m)


def pretrain_source(source: Dataset, config: TrainConfig, log_fh=None) -> RunState:
    """Train the three peers independently on labeled source data.

    Peers get distinct init seeds and distinct shuffling streams; the
    learning rate drops by 10x at each milestone epoch.  Teachers are set
    equal to the students at the end.
    """
    config.validate()
    unlabeled = np.nonzero(source.identities == UNLABELED)[0]
    if unlabeled.size:
        raise ValueError(f"source sample {int(unlabeled[0])} is unlabeled")
    classes, labels = np.unique(source.identities, return_inverse=True)
    if classes.size < 2:
        raise ValueError("source domain needs at least 2 identities")

    ens = model.make_ensemble(
        source.d_in, config.d_hidden, config.d_feat, classes.size, config.rho, config.seed
    )
    adam = [
        model.init_adam(
            peer,
            config.lr,
            beta1=config.beta1,
            beta2=config.beta2,
            eps=config.adam_eps,
            weight_decay=config.weight_decay,
        )
        for peer in ens.students
    ]
    shufflers = [Rng(config.seed, PRETRAIN_SHUFFLE_STREAM + k) for k in range(3)]

    n = len(source)
    for epoch in range(config.source_epochs):
        lr = config.lr * _lr_factor(epoch, config.source_milestones)
        for state in adam:
            state.lr = lr
        epoch_ce = [0.0, 0.0, 0.0]
        for k in range(3):
            batches = _batches(shufflers[k].permutation(n), config.batch_size)
            for batch in batches:
                x = source.features[batch]
                _, z, cache = model.forward(ens.students[k], x)
                value, dz = source_ce(z, labels[batch])
                grads = model.backward(ens.students[k], cache, np.zeros_like(cache.h), dz)
                model.adam_step(adam[k], ens.students[k], grads)
                epoch_ce[k] += value * len(batch)
        if log_fh is not None:
            record = {
                "stage": "pretrain",
                "epoch": epoch,
                "ce": [ce / n for ce in epoch_ce],
                "lr": lr,
            }
            log_fh.write(json.dumps(record, sort_keys=True) + "\n")

    ens.teachers = copy.deepcopy(ens.students)
    ens.iteration = 0
    return RunState(ensemble=ens, adam=adam, label_map=classes)


def _ablation_weights(weights: LossWeights, ablation: Optional[str]) -> LossWeights:
    w = copy.deepcopy(weights)
    if ablation == "no_id":
        w.xi = 0.0
    elif ablation == "no_dt":
        w.xi = 1.0
    elif ablation == "no_bnm":
        w.lambda_bnm = 0.0
    elif ablation == "no_ms":
        w.eta_ms = 0.0
    return w


def adapt(
    target: Dataset,
    state: RunState,
    config: TrainConfig,
    ablation: Optional[str] = None,
    callback: Optional[Callable[[IterationRecord], None]] = None,
    log_fh=None,
) -> RunState:
    """Per epoch: re-cluster fused multi-view features, re-fit heads when the
    cluster count changes, then optimize the composite loss batch by batch
    with one EMA update per iteration."""
    config.validate()
    if ablation is not None and ablation not in ABLATIONS:
        raise ValueError(f"unknown ablation {ablation!r}; choose from {ABLATIONS}")
    if len(target) < 2:
        raise ValueError("target dataset must contain at least 2 samples")

    weights = _ablation_weights(config.weights, ablation)
    include_teacher_bnm = ablation != "no_ema"
    ens = state.ensemble
    ens.rho = 0.0 if ablation == "no_ema" else config.rho

    shuffler = Rng(config.seed, ADAPT_SHUFFLE_STREAM)
    cluster_aug = [Rng(config.seed, CLUSTER_AUGMENT_STREAM + j) for j in range(3)]
    batch_aug = [Rng(config.seed, BATCH_AUGMENT_STREAM + j) for j in range(3)]
    reinit_rngs = [Rng(config.seed, REINIT_STREAM + k) for k in range(3)]

    n = len(target)
    head_width = ens.students[0].head.b.shape[0]
    for epoch in range(config.adapt_epochs):
        # (a) cluster fused features of three augmented views per image
        view_feats = []
        for j in range(3):
            xa = augment_batch(target.features, config.augment, cluster_aug[j])
            h, _, _ = model.encode(ens.students[j].encoder, xa)
            view_feats.append(h)
        pseudo = assign_pseudo_labels(fuse_views(*view_feats), config.dbscan, epoch=epoch)
        state.pseudo = pseudo
        degenerate = pseudo.m_t < 2

        # (b) heads follow the current cluster count
        if not degenerate and (epoch == 0 or pseudo.m_t != head_width):
            model.reinit_heads(ens, state.adam, pseudo.m_t, reinit_rngs)
            head_width = pseudo.m_t

        # (c) mini-batch optimization
        epoch_total = 0.0
        epoch_count = 0
        for batch in _batches(shuffler.permutation(n), config.batch_size):
            x = target.features[batch]
            batch_labels = pseudo.assignment[batch]
            b = len(batch)

            student_h, student_z, caches = [], [], []
            teacher_z = []
            for k in range(3):
                view = augment_batch(x, config.augment, batch_aug[k])
                h, z, cache = model.forward(ens.students[k], view)
                student_h.append(h)
                student_z.append(z)
                caches.append(cache)
                _, zt, _ = model.forward(ens.teachers[k], view)
                teacher_z.append(zt)

            id_term = None
            if not degenerate and weights.xi > 0.0:
                mask = batch_labels != OUTLIER
                if mask.any():
                    id_value = 0.0
                    id_dz = []
                    for k in range(3):
                        value, grad = id_loss(
                            student_z[k][mask], batch_labels[mask], config.smoothing
                        )
                        id_value += value
                        scattered = np.zeros_like(student_z[k])
                        scattered[mask] = grad
                        id_dz.append(scattered)
                else:
                    id_value, id_dz = 0.0, [np.zeros_like(z) for z in student_z]
                id_term = (id_value, id_dz)

            dt_term = distill_loss(student_z, teacher_z)
            bnm_term = None
            if weights.lambda_bnm > 0.0:
                bnm_term = bnm_loss(student_z, teacher_z if include_teacher_bnm else None)
            ms_term = None
            if weights.eta_ms > 0.0:
                feats = np.concatenate(student_h, axis=0)
                ids = np.tile(np.arange(b), 3)
                row_labels = np.tile(batch_labels, 3)
                value, grad = ms_loss(feats, ids, row_labels, config.ms)
                ms_term = (value, [grad[k * b : (k + 1) * b] for k in range(3)])

            report = total_loss(
                weights,
                b,
                head_width,
                config.d_feat,
                id_term=id_term,
                dt_term=dt_term,
                bnm_term=bnm_term,
                ms_term=ms_term,
            )

            if callback is not None:
                callback(
                    IterationRecord(
                        iteration=state.iteration,
                        epoch=epoch,
                        report=report,
                        student_logits=student_z,
                        teacher_logits=teacher_z,
                        batch_indices=batch,
                        ensemble=ens,
                    )
                )
            if log_fh is not None:
                log_fh.write(
                    report.values_json(
                        iteration=state.iteration, epoch=epoch, m_t=pseudo.m_t
                    )
                    + "\n"
                )

            for k in range(3):
                grads = model.backward(ens.students[k], caches[k], report.dh[k], report.dz[k])
                model.adam_step(state.adam[k], ens.students[k], grads)
            model.ema_update(ens)
            state.iteration += 1
            epoch_total += report.total * b
            epoch_count += b

        state.epoch = epoch + 1
        state.history.append(
            {"epoch": epoch, "m_t": pseudo.m_t, "mean_total": epoch_total / epoch_count}
        )
    return state


def keep_final_model(state: RunState, peer: Optional[int] = None, use_teacher: Optional[bool] = None):
    """The single model retained for inference."""
    return model.keep_final_model(
        state.ensemble,
        peer=0 if peer is None else peer,
        use_teacher=True if use_teacher is None else use_teacher,
    )
