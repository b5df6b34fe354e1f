"""Synthetic labeled-source / unlabeled-target data with controllable shift.

Identities are Gaussian clusters in feature space; cameras add per-camera
offsets; the target domain is rotated in a random plane and translated.
View augmentations are feature-space analogues of image augmentation:
additive jitter (crop), coordinate masking (erasing), and global scaling
(photometric change).
"""

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from tripeer.rng import Rng

SOURCE = "source"
TARGET = "target"
UNLABELED = -1

# Rng streams used by generate_domain (derived from the dataset seed).
MEANS_STREAM = 10
NOISE_STREAM = 11
CAMERA_STREAM = 12
ROTATION_STREAM = 13
OFFSET_STREAM = 14


@dataclass
class DomainSpec:
    n_identities: int
    samples_per_identity: int
    n_cameras: int
    d_in: int
    intra_class_sigma: float
    camera_shift_sigma: float
    domain_rotation_angle: float
    domain_offset_sigma: float

    def validate(self) -> None:
        for name in ("n_identities", "samples_per_identity", "n_cameras", "d_in"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        for name in ("intra_class_sigma", "camera_shift_sigma", "domain_offset_sigma"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be non-negative")
        if not 0.0 <= self.domain_rotation_angle <= np.pi:
            raise ValueError("domain_rotation_angle must be in [0, pi]")


@dataclass
class AugmentSpec:
    jitter_sigma: float = 0.1
    mask_fraction: float = 0.1
    scale_lo: float = 0.9
    scale_hi: float = 1.1

    def validate(self) -> None:
        if not 0.0 <= self.mask_fraction <= 1.0:
            raise ValueError("mask_fraction must be in [0, 1]")
        if not 0.0 < self.scale_lo <= self.scale_hi:
            raise ValueError("scale range must satisfy 0 < lo <= hi")
        if self.jitter_sigma < 0.0:
            raise ValueError("jitter_sigma must be non-negative")


@dataclass
class Sample:
    features: np.ndarray
    identity: Optional[int]
    camera: int
    domain: str


@dataclass
class Dataset:
    features: np.ndarray  # (n, d_in)
    identities: np.ndarray  # int64, UNLABELED for unknown
    cameras: np.ndarray  # int64
    domain: str

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def d_in(self) -> int:
        return self.features.shape[1]

    def sample(self, i: int) -> Sample:
        identity = int(self.identities[i])
        return Sample(
            features=self.features[i],
            identity=None if identity == UNLABELED else identity,
            camera=int(self.cameras[i]),
            domain=self.domain,
        )


def _rotation_matrix(d: int, angle: float, rng: Rng) -> np.ndarray:
    """Rotation by ``angle`` in a random 2-plane of R^d."""
    u = rng.normal(d)
    u /= np.sqrt(u @ u)
    v = rng.normal(d)
    v -= (u @ v) * u
    v /= np.sqrt(v @ v)
    c, s = np.cos(angle), np.sin(angle)
    return np.eye(d) + (c - 1.0) * (np.outer(u, u) + np.outer(v, v)) + s * (np.outer(v, u) - np.outer(u, v))


def generate_domain(spec: DomainSpec, seed: int, domain: str = SOURCE) -> Dataset:
    """Samples = identity mean + intra-class noise + camera offset.

    Cameras are assigned round-robin within each identity.  Target domains
    are additionally rotated in a random plane and globally translated.
    """
    spec.validate()
    if domain not in (SOURCE, TARGET):
        raise ValueError(f"domain must be '{SOURCE}' or '{TARGET}'")
    n = spec.n_identities * spec.samples_per_identity
    d = spec.d_in

    means = Rng(seed, MEANS_STREAM).normal(spec.n_identities * d).reshape(spec.n_identities, d)
    noise = Rng(seed, NOISE_STREAM).normal(n * d, sigma=spec.intra_class_sigma).reshape(n, d)
    camera_offsets = (
        Rng(seed, CAMERA_STREAM)
        .normal(spec.n_cameras * d, sigma=spec.camera_shift_sigma)
        .reshape(spec.n_cameras, d)
    )

    identities = np.repeat(np.arange(spec.n_identities, dtype=np.int64), spec.samples_per_identity)
    cameras = np.tile(
        np.arange(spec.samples_per_identity, dtype=np.int64) % spec.n_cameras, spec.n_identities
    )
    features = means[identities] + noise + camera_offsets[cameras]

    if domain == TARGET:
        rotation = _rotation_matrix(d, spec.domain_rotation_angle, Rng(seed, ROTATION_STREAM))
        offset = Rng(seed, OFFSET_STREAM).normal(d, sigma=spec.domain_offset_sigma)
        features = features @ rotation.T + offset

    return Dataset(features=features, identities=identities, cameras=cameras, domain=domain)


def augment_view(x: np.ndarray, spec: AugmentSpec, rng: Rng) -> np.ndarray:
    """One stochastic view: scale * (x + jitter), then mask a coordinate subset.

    Draw order is fixed (jitter, scale, mask) so streams are reproducible.
    """
    spec.validate()
    d = x.shape[0]
    jitter = rng.normal(d, sigma=spec.jitter_sigma)
    scale = rng.uniform_range(1, spec.scale_lo, spec.scale_hi)[0]
    out = scale * (x + jitter)
    n_mask = int(round(spec.mask_fraction * d))
    if n_mask:
        out[rng.subset(d, n_mask)] = 0.0
    return out


def augment_batch(x: np.ndarray, spec: AugmentSpec, rng: Rng) -> np.ndarray:
    """augment_view applied row by row, consuming one stream in row order."""
    return np.stack([augment_view(x[i], spec, rng) for i in range(x.shape[0])])


def bench_v1_spec() -> DomainSpec:
    """The frozen desk-scale benchmark geometry (bench-v1)."""
    return DomainSpec(
        n_identities=50,
        samples_per_identity=12,
        n_cameras=4,
        d_in=32,
        intra_class_sigma=0.35,
        camera_shift_sigma=0.25,
        domain_rotation_angle=0.5,
        domain_offset_sigma=0.5,
    )


def bench_v1_datasets(seed: int) -> tuple[Dataset, Dataset]:
    """Source and target bench-v1 domains (target seed = seed + 1)."""
    spec = bench_v1_spec()
    return generate_domain(spec, seed, SOURCE), generate_domain(spec, seed + 1, TARGET)


def save_csv(dataset: Dataset, path) -> None:
    """Schema: header id,camera,f0..f{d-1}; empty id marks an unlabeled row."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "camera"] + [f"f{i}" for i in range(dataset.d_in)])
        for i in range(len(dataset)):
            identity = int(dataset.identities[i])
            row = ["" if identity == UNLABELED else str(identity), str(int(dataset.cameras[i]))]
            row += [repr(float(v)) for v in dataset.features[i]]
            writer.writerow(row)


def load_csv(path, domain: str = SOURCE) -> Dataset:
    """Parse the CSV schema above; malformed rows are rejected by line number."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError("empty file: missing header") from None
        if len(header) < 3 or header[0] != "id" or header[1] != "camera":
            raise ValueError("line 1: header must be id,camera,f0,...")
        d = len(header) - 2
        features, identities, cameras = [], [], []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d + 2:
                raise ValueError(f"line {line_no}: expected {d + 2} fields, got {len(row)}")
            identity = UNLABELED
            if row[0] != "":
                try:
                    identity = int(row[0])
                except ValueError:
                    raise ValueError(f"line {line_no}: bad id {row[0]!r}") from None
                if identity < 0:
                    raise ValueError(f"line {line_no}: negative id {identity}")
            try:
                camera = int(row[1])
            except ValueError:
                raise ValueError(f"line {line_no}: bad camera {row[1]!r}") from None
            if camera < 0:
                raise ValueError(f"line {line_no}: negative camera id {camera}")
            try:
                values = [float(v) for v in row[2:]]
            except ValueError:
                raise ValueError(f"line {line_no}: non-numeric feature value") from None
            if not all(np.isfinite(values)):
                raise ValueError(f"line {line_no}: non-finite feature value")
            identities.append(identity)
            cameras.append(camera)
            features.append(values)
    if not features:
        raise ValueError("file has a header but no samples")
    return Dataset(
        features=np.array(features, dtype=np.float64),
        identities=np.array(identities, dtype=np.int64),
        cameras=np.array(cameras, dtype=np.int64),
        domain=domain,
    )
