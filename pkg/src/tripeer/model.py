"""Peer encoders: MLP forward/backward, EMA teachers, Adam, checkpoints.

An encoder is a two-layer tanh MLP; its output features are L2-normalized
inside the differentiable graph, and a linear head maps features to class
logits.  An ensemble holds three student peers plus their momentum-averaged
teacher copies.
"""

import copy
import struct
from collections import OrderedDict
from dataclasses import dataclass, fields
from typing import Iterator

import numpy as np

from tripeer.rng import Rng

CHECKPOINT_MAGIC = b"TPEERCK1"
CHECKPOINT_VERSION = 1


@dataclass
class EncoderParams:
    w1: np.ndarray  # (d_in, d_hidden)
    b1: np.ndarray  # (d_hidden,)
    w2: np.ndarray  # (d_hidden, d_feat)
    b2: np.ndarray  # (d_feat,)


@dataclass
class HeadParams:
    w: np.ndarray  # (d_feat, n_classes)
    b: np.ndarray  # (n_classes,)


@dataclass
class PeerParams:
    encoder: EncoderParams
    head: HeadParams


def named_arrays(obj, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
    """(name, array) pairs in declaration order, recursing into dataclasses."""
    for f in fields(obj):
        value = getattr(obj, f.name)
        name = f"{prefix}{f.name}"
        if isinstance(value, np.ndarray):
            yield name, value
        else:
            yield from named_arrays(value, prefix=f"{name}.")


def flatten_params(obj) -> np.ndarray:
    return np.concatenate([a.ravel() for _, a in named_arrays(obj)])


def set_params_flat(obj, vec: np.ndarray) -> None:
    offset = 0
    for _, a in named_arrays(obj):
        a.flat[:] = vec[offset : offset + a.size]
        offset += a.size
    if offset != vec.size:
        raise ValueError(f"flat vector has {vec.size} entries, expected {offset}")


def zeros_like_params(obj):
    out = copy.deepcopy(obj)
    for _, a in named_arrays(out):
        a[...] = 0.0
    return out


def init_encoder(d_in: int, d_hidden: int, d_feat: int, rng: Rng) -> EncoderParams:
    """Symmetric-uniform weights scaled by 1/sqrt(fan_in), zero biases."""
    w1 = rng.uniform_range(d_in * d_hidden, -1.0, 1.0).reshape(d_in, d_hidden)
    w2 = rng.uniform_range(d_hidden * d_feat, -1.0, 1.0).reshape(d_hidden, d_feat)
    return EncoderParams(
        w1=w1 / np.sqrt(d_in),
        b1=np.zeros(d_hidden),
        w2=w2 / np.sqrt(d_hidden),
        b2=np.zeros(d_feat),
    )


def init_head(d_feat: int, n_classes: int, rng: Rng) -> HeadParams:
    if n_classes < 2:
        raise ValueError(f"head needs at least 2 classes, got {n_classes}")
    w = rng.uniform_range(d_feat * n_classes, -1.0, 1.0).reshape(d_feat, n_classes)
    return HeadParams(w=w / np.sqrt(d_feat), b=np.zeros(n_classes))


@dataclass
class ForwardCache:
    x: np.ndarray
    a1: np.ndarray
    h: np.ndarray
    inv_norm: np.ndarray  # (B, 1); 0 for rows whose raw feature was 0


def encode(enc: EncoderParams, x: np.ndarray):
    """Normalized features plus the intermediates needed for backward."""
    if x.ndim != 2 or x.shape[1] != enc.w1.shape[0]:
        raise ValueError(
            f"input batch has shape {x.shape}, expected (*, {enc.w1.shape[0]})"
        )
    a1 = np.tanh(x @ enc.w1 + enc.b1)
    s2 = a1 @ enc.w2 + enc.b2
    norms = np.sqrt(np.sum(s2 * s2, axis=1, keepdims=True))
    inv_norm = np.where(norms > 0.0, 1.0 / np.where(norms > 0.0, norms, 1.0), 0.0)
    h = s2 * inv_norm
    return h, a1, inv_norm


def forward(peer: PeerParams, x: np.ndarray):
    """Returns (h, z, cache): normalized features, logits, backward cache."""
    h, a1, inv_norm = encode(peer.encoder, x)
    z = h @ peer.head.w + peer.head.b
    return h, z, ForwardCache(x=x, a1=a1, h=h, inv_norm=inv_norm)


def backward(peer: PeerParams, cache: ForwardCache, dl_dh: np.ndarray, dl_dz: np.ndarray) -> PeerParams:
    """Exact parameter gradients for a loss with the given h/z partials."""
    h = cache.h
    if dl_dh.shape != h.shape or dl_dz.shape[0] != h.shape[0]:
        raise ValueError("gradient blocks do not match the cached forward shapes")
    d_head_w = h.T @ dl_dz
    d_head_b = dl_dz.sum(axis=0)
    dh = dl_dh + dl_dz @ peer.head.w.T
    # through row-wise L2 normalization: d s2 = (dh - h <h, dh>) / ||s2||
    ds2 = (dh - h * np.sum(h * dh, axis=1, keepdims=True)) * cache.inv_norm
    d_w2 = cache.a1.T @ ds2
    d_b2 = ds2.sum(axis=0)
    ds1 = (ds2 @ peer.encoder.w2.T) * (1.0 - cache.a1 * cache.a1)
    d_w1 = cache.x.T @ ds1
    d_b1 = ds1.sum(axis=0)
    return PeerParams(
        encoder=EncoderParams(w1=d_w1, b1=d_b1, w2=d_w2, b2=d_b2),
        head=HeadParams(w=d_head_w, b=d_head_b),
    )


@dataclass
class PeerEnsemble:
    students: list  # 3 x PeerParams
    teachers: list  # 3 x PeerParams (EMA copies)
    rho: float
    iteration: int


PEER_INIT_STREAM = 100  # + peer index


def make_ensemble(
    d_in: int, d_hidden: int, d_feat: int, n_classes: int, rho: float, seed: int
) -> PeerEnsemble:
    """Three independently initialized students; teachers start equal."""
    students = []
    for k in range(3):
        r = Rng(seed, PEER_INIT_STREAM + k)
        students.append(
            PeerParams(encoder=init_encoder(d_in, d_hidden, d_feat, r), head=init_head(d_feat, n_classes, r))
        )
    teachers = copy.deepcopy(students)
    return PeerEnsemble(students=students, teachers=teachers, rho=rho, iteration=0)


def ema_update(ens: PeerEnsemble) -> PeerEnsemble:
    """teacher <- rho * teacher + (1 - rho) * student, all peers."""
    for student, teacher in zip(ens.students, ens.teachers):
        for (_, s), (_, t) in zip(named_arrays(student), named_arrays(teacher)):
            t *= ens.rho
            t += (1.0 - ens.rho) * s
    ens.iteration += 1
    return ens


@dataclass
class AdamState:
    lr: float
    beta1: float
    beta2: float
    eps: float
    weight_decay: float
    m: "OrderedDict[str, np.ndarray]"
    v: "OrderedDict[str, np.ndarray]"
    steps: "OrderedDict[str, int]"  # per-array, so head reinit restarts cleanly


def init_adam(
    peer: PeerParams,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> AdamState:
    m = OrderedDict((name, np.zeros_like(a)) for name, a in named_arrays(peer))
    v = OrderedDict((name, np.zeros_like(a)) for name, a in named_arrays(peer))
    steps = OrderedDict((name, 0) for name in m)
    return AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps, weight_decay=weight_decay, m=m, v=v, steps=steps)


def adam_step(state: AdamState, peer: PeerParams, grads: PeerParams) -> None:
    """In-place AdamW update with bias-corrected moments."""
    for (name, p), (_, g) in zip(named_arrays(peer), named_arrays(grads)):
        if not np.all(np.isfinite(g)):
            raise ValueError(f"non-finite gradient for parameter {name}")
        state.steps[name] += 1
        t = state.steps[name]
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        p -= state.lr * (m_hat / (np.sqrt(v_hat) + state.eps) + state.weight_decay * p)


def reset_head_adam(state: AdamState) -> None:
    for name in state.m:
        if name.startswith("head."):
            state.m[name] = np.zeros_like(state.m[name])
            state.v[name] = np.zeros_like(state.v[name])
            state.steps[name] = 0


def reinit_heads(
    ens: PeerEnsemble, adam_states: list, n_classes: int, rngs: list
) -> None:
    """Fresh student heads of the new width; teachers reset equal, Adam zeroed."""
    for k in range(3):
        head = init_head(ens.students[k].encoder.w2.shape[1], n_classes, rngs[k])
        ens.students[k].head = head
        ens.teachers[k].head = copy.deepcopy(head)
        if adam_states:
            state = adam_states[k]
            state.m["head.w"] = np.zeros_like(head.w)
            state.v["head.w"] = np.zeros_like(head.w)
            state.m["head.b"] = np.zeros_like(head.b)
            state.v["head.b"] = np.zeros_like(head.b)
            state.steps["head.w"] = 0
            state.steps["head.b"] = 0


def save_arrays(path, arrays: "OrderedDict[str, np.ndarray]") -> None:
    """Little-endian binary checkpoint: magic, version, shape table, data blocks."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(arrays)))
        for name, a in arrays.items():
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", a.ndim))
            fh.write(struct.pack(f"<{a.ndim}I", *a.shape))
        for a in arrays.values():
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_arrays(path) -> "OrderedDict[str, np.ndarray]":
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a tripeer checkpoint: bad magic {magic!r}")
        version, count = struct.unpack("<II", fh.read(8))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        shapes = []
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            shapes.append((name, shape))
        arrays = OrderedDict()
        for name, shape in shapes:
            n = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(8 * n), dtype="<f8").astype(np.float64)
            arrays[name] = data.reshape(shape)
    return arrays


def peer_to_arrays(peer: PeerParams, prefix: str = "") -> "OrderedDict[str, np.ndarray]":
    return OrderedDict((f"{prefix}{n}", a) for n, a in named_arrays(peer))


def peer_from_arrays(arrays, prefix: str = "") -> PeerParams:
    def get(name):
        return np.array(arrays[f"{prefix}{name}"], dtype=np.float64)

    return PeerParams(
        encoder=EncoderParams(w1=get("encoder.w1"), b1=get("encoder.b1"), w2=get("encoder.w2"), b2=get("encoder.b2")),
        head=HeadParams(w=get("head.w"), b=get("head.b")),
    )


def ensemble_to_arrays(ens: PeerEnsemble) -> "OrderedDict[str, np.ndarray]":
    arrays = OrderedDict()
    arrays["meta.rho"] = np.array(ens.rho)
    arrays["meta.iteration"] = np.array(float(ens.iteration))
    for k in range(3):
        arrays.update(peer_to_arrays(ens.students[k], prefix=f"student{k}."))
    for k in range(3):
        arrays.update(peer_to_arrays(ens.teachers[k], prefix=f"teacher{k}."))
    return arrays


def ensemble_from_arrays(arrays) -> PeerEnsemble:
    students = [peer_from_arrays(arrays, prefix=f"student{k}.") for k in range(3)]
    teachers = [peer_from_arrays(arrays, prefix=f"teacher{k}.") for k in range(3)]
    return PeerEnsemble(
        students=students,
        teachers=teachers,
        rho=float(arrays["meta.rho"]),
        iteration=int(arrays["meta.iteration"]),
    )


def save_ensemble(path, ens: PeerEnsemble) -> None:
    save_arrays(path, ensemble_to_arrays(ens))


def load_ensemble(path) -> PeerEnsemble:
    return ensemble_from_arrays(load_arrays(path))


def save_peer(path, peer: PeerParams) -> None:
    save_arrays(path, peer_to_arrays(peer))


def load_peer(path) -> PeerParams:
    return peer_from_arrays(load_arrays(path))


def keep_final_model(ens: PeerEnsemble, peer: int = 0, use_teacher: bool = True) -> PeerParams:
    """The single model retained for inference (teacher copy of peer 0 by default)."""
    source = ens.teachers if use_teacher else ens.students
    return copy.deepcopy(source[peer])
