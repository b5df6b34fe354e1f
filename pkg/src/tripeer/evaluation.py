"""Retrieval evaluation: mAP and CMC over a query/gallery split.

Follows the single-gallery-shot convention: gallery entries sharing both
identity and camera with the query are excluded per query; queries with no
remaining relevant entry are skipped and counted.
"""

import json
from dataclasses import dataclass

import numpy as np

from tripeer.model import EncoderParams, encode
from tripeer.synthdata import Dataset

DEFAULT_RANKS = (1, 5, 10)


@dataclass
class RetrievalProtocol:
    query_indices: np.ndarray
    gallery_indices: np.ndarray

    def validate(self, n: int) -> None:
        if self.query_indices.size == 0 or self.gallery_indices.size == 0:
            raise ValueError("query and gallery must both be non-empty")
        for name, idx in (("query", self.query_indices), ("gallery", self.gallery_indices)):
            if idx.min() < 0 or idx.max() >= n:
                raise ValueError(f"{name} index out of range")


@dataclass
class EvalReport:
    map: float
    cmc: dict  # rank -> fraction
    per_query_ap: list
    skipped: int

    def to_json(self, **extra) -> str:
        record = {
            "mAP": self.map,
            "cmc": {str(k): v for k, v in sorted(self.cmc.items())},
            "skipped_queries": self.skipped,
            "per_query_ap": self.per_query_ap,
        }
        record.update(extra)
        return json.dumps(record, sort_keys=True)


def split_query_gallery(dataset: Dataset, query_camera: int = 0) -> RetrievalProtocol:
    """Per identity, the first sample seen under ``query_camera`` becomes the
    query; every other sample goes to the gallery."""
    query, gallery = [], []
    chosen: set[int] = set()
    for i in range(len(dataset)):
        identity = int(dataset.identities[i])
        if identity not in chosen and int(dataset.cameras[i]) == query_camera:
            query.append(i)
            chosen.add(identity)
        else:
            gallery.append(i)
    return RetrievalProtocol(
        query_indices=np.array(query, dtype=np.int64),
        gallery_indices=np.array(gallery, dtype=np.int64),
    )


def extract_features(encoder: EncoderParams, samples: np.ndarray) -> np.ndarray:
    """Deterministic L2-normalized features; no augmentation at test time."""
    h, _, _ = encode(encoder, np.asarray(samples, dtype=np.float64))
    return h


def evaluate(
    query_features: np.ndarray,
    query_ids: np.ndarray,
    query_cams: np.ndarray,
    gallery_features: np.ndarray,
    gallery_ids: np.ndarray,
    gallery_cams: np.ndarray,
    ranks=DEFAULT_RANKS,
) -> EvalReport:
    """Rank the gallery per query by cosine distance (stable tie-break by
    gallery index) and accumulate AP and CMC at the requested ranks."""
    dist = 1.0 - np.asarray(query_features) @ np.asarray(gallery_features).T
    aps = []
    cmc_hits = {k: 0 for k in ranks}
    skipped = 0
    for qi in range(dist.shape[0]):
        keep = ~((gallery_ids == query_ids[qi]) & (gallery_cams == query_cams[qi]))
        if not keep.any():
            skipped += 1
            continue
        order = np.argsort(dist[qi, keep], kind="stable")
        relevant = (gallery_ids[keep] == query_ids[qi])[order]
        if not relevant.any():
            skipped += 1
            continue
        hits = np.cumsum(relevant)
        positions = np.nonzero(relevant)[0] + 1  # 1-based ranks of relevant items
        aps.append(float(np.mean(hits[positions - 1] / positions)))
        first = positions[0]
        for k in ranks:
            if first <= k:
                cmc_hits[k] += 1
    n_valid = len(aps)
    if n_valid == 0:
        raise ValueError("every query was skipped; check the protocol")
    return EvalReport(
        map=float(np.mean(aps)),
        cmc={k: cmc_hits[k] / n_valid for k in ranks},
        per_query_ap=aps,
        skipped=skipped,
    )


def evaluate_protocol(
    dataset: Dataset,
    features: np.ndarray,
    query_camera: int = 0,
    ranks=DEFAULT_RANKS,
) -> EvalReport:
    protocol = split_query_gallery(dataset, query_camera=query_camera)
    protocol.validate(len(dataset))
    q, g = protocol.query_indices, protocol.gallery_indices
    return evaluate(
        features[q],
        dataset.identities[q],
        dataset.cameras[q],
        features[g],
        dataset.identities[g],
        dataset.cameras[g],
        ranks=ranks,
    )


def save_per_query_csv(report: EvalReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("query_rank,ap\n")
        for i, ap in enumerate(report.per_query_ap):
            fh.write(f"{i},{ap!r}\n")
