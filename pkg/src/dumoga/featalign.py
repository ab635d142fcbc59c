"""Feature alignment (cross-attention) and fused candidate scoring."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional, Union

import numpy as np

from .graphs import DEFAULT_TEXT_DIM, DEFAULT_VISUAL_DIM, DataError, DependencyGraph, Mask, SceneGraph
from .structal import AlignmentMap

SCORE_EPS = 1e-7
DEFAULT_HIDDEN = 512
PARAM_MAGIC = b"DGP1"
PARAM_ORDER = ("Wq", "W1", "b1", "W2", "b2")


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Query projection ``Wq`` (D_v x D_t) plus a one-hidden-layer scoring MLP.

    All tensors are float64 numpy arrays; ``b2`` is 0-dimensional.
    """

    Wq: np.ndarray
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        for name in PARAM_ORDER:
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        dv, dt = self.Wq.shape
        h = self.b1.shape[0] if self.b1.ndim == 1 else -1
        expected = {"Wq": (dv, dt), "W1": (2 * dt, h), "b1": (h,), "W2": (h, 1), "b2": ()}
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ValueError(f"parameter {name} has shape {getattr(self, name).shape}, expected {shape}")
        for name in PARAM_ORDER:
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"parameter {name} has non-finite entries")

    @property
    def visual_dim(self) -> int:
        return self.Wq.shape[0]

    @property
    def text_dim(self) -> int:
        return self.Wq.shape[1]

    @property
    def hidden(self) -> int:
        return self.b1.shape[0]

    def tensors(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_ORDER}

    @classmethod
    def from_tensors(cls, tensors: dict) -> "ModelParams":
        return cls(**{name: tensors[name] for name in PARAM_ORDER})

    @classmethod
    def zeros(cls, visual_dim=DEFAULT_VISUAL_DIM, text_dim=DEFAULT_TEXT_DIM, hidden=DEFAULT_HIDDEN) -> "ModelParams":
        return cls(np.zeros((visual_dim, text_dim)), np.zeros((2 * text_dim, hidden)),
                   np.zeros(hidden), np.zeros((hidden, 1)), np.zeros(()))

    @classmethod
    def init(cls, visual_dim=DEFAULT_VISUAL_DIM, text_dim=DEFAULT_TEXT_DIM, hidden=DEFAULT_HIDDEN,
             seed: int = 42) -> "ModelParams":
        """Glorot-uniform matrices, zero biases."""
        rng = np.random.default_rng(seed)

        def glorot(fan_in, fan_out):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-bound, bound, size=(fan_in, fan_out))

        return cls(glorot(visual_dim, text_dim), glorot(2 * text_dim, hidden), np.zeros(hidden),
                   glorot(hidden, 1), np.zeros(()))


def save_params(path, params: ModelParams) -> None:
    """Write a ``DGP1`` checkpoint (little-endian, f32 payloads)."""
    with open(path, "wb") as fh:
        fh.write(PARAM_MAGIC)
        for name in PARAM_ORDER:
            arr = np.asarray(getattr(params, name), dtype="<f4")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr).tobytes())


def load_params(path) -> ModelParams:
    data = Path(path).read_bytes()
    if data[:4] != PARAM_MAGIC:
        raise DataError("bad magic bytes, expected DGP1", source=str(path))
    pos = 4
    tensors = {}

    def take(nbytes):
        nonlocal pos
        if pos + nbytes > len(data):
            raise DataError("truncated checkpoint", source=str(path))
        chunk = data[pos:pos + nbytes]
        pos += nbytes
        return chunk

    for expected in PARAM_ORDER:
        (nlen,) = struct.unpack("<I", take(4))
        name = take(nlen).decode("utf-8")
        if name != expected:
            raise DataError(f"tensor {name!r} found where {expected!r} expected", source=str(path))
        (ndim,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{ndim}I", take(4 * ndim))
        count = int(np.prod(dims, dtype=np.int64))
        tensors[name] = np.frombuffer(take(4 * count), dtype="<f4").reshape(dims).astype(np.float64)
    if pos != len(data):
        raise DataError(f"{len(data) - pos} trailing bytes after last tensor", source=str(path))
    try:
        return ModelParams.from_tensors(tensors)
    except ValueError as exc:
        raise DataError(str(exc), source=str(path)) from None


@dataclass(frozen=True, eq=False)
class ScoreVector:
    scores: np.ndarray
    valid: np.ndarray
    selected: int

    @property
    def n(self) -> int:
        return len(self.scores)


def softmax_rows(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    return np.exp(-np.logaddexp(0.0, -z))


def _check_finite(name, arr):
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"non-finite values in {name}")


def cross_attention(F_i: np.ndarray, F_l: np.ndarray, Wq: np.ndarray, return_weights: bool = False):
    """Objects attend over words: ``softmax((F_i Wq) F_l^T / sqrt(D_t)) F_l``."""
    F_i = np.asarray(F_i, dtype=np.float64)
    F_l = np.asarray(F_l, dtype=np.float64)
    if F_l.ndim != 2 or F_l.shape[0] < 1:
        raise ValueError("F_l must be a non-empty l x D_t matrix")
    if F_i.ndim != 2 or F_i.shape[1] != Wq.shape[0] or F_l.shape[1] != Wq.shape[1]:
        raise ValueError(
            f"dimension mismatch: F_i {F_i.shape}, Wq {np.shape(Wq)}, F_l {F_l.shape}")
    for name, arr in (("F_i", F_i), ("F_l", F_l), ("Wq", Wq)):
        _check_finite(name, arr)
    q = F_i @ Wq
    weights = softmax_rows(q @ F_l.T / np.sqrt(F_l.shape[1]))
    out = weights @ F_l
    return (out, weights) if return_weights else out


def _alpha_array(alpha) -> np.ndarray:
    return np.asarray(alpha.alpha if isinstance(alpha, AlignmentMap) else alpha, dtype=np.float64)


def fused_inputs(Ra: np.ndarray, alpha, F_l: np.ndarray) -> np.ndarray:
    """Per-object concatenation ``[R^a_j ; (alpha F_l)_j]``."""
    a = _alpha_array(alpha)
    if a.shape != (Ra.shape[0], F_l.shape[0]) or Ra.shape[1] != F_l.shape[1]:
        raise ValueError(f"shape mismatch: R^a {Ra.shape}, alpha {a.shape}, F_l {F_l.shape}")
    return np.concatenate([Ra, a @ F_l], axis=1)


def mlp_logits(Z: np.ndarray, params: ModelParams) -> np.ndarray:
    if Z.shape[1] != params.W1.shape[0]:
        raise ValueError(f"fused width {Z.shape[1]} does not match W1 rows {params.W1.shape[0]}")
    hidden = np.maximum(Z @ params.W1 + params.b1, 0.0)
    return (hidden @ params.W2)[:, 0] + params.b2


def select(scores: np.ndarray, valid: np.ndarray) -> int:
    if not valid.any():
        raise ValueError("no valid candidate slot")
    return int(np.argmax(np.where(valid, scores, -np.inf)))


def _valid_mask(valid, n: int) -> np.ndarray:
    v = np.ones(n, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    if v.shape != (n,):
        raise ValueError(f"validity mask has shape {v.shape}, expected ({n},)")
    return v


def fuse_and_score(Ra: np.ndarray, alpha, F_l: np.ndarray, params: ModelParams,
                   valid: Optional[np.ndarray] = None) -> ScoreVector:
    Z = fused_inputs(np.asarray(Ra, dtype=np.float64), alpha, np.asarray(F_l, dtype=np.float64))
    v = _valid_mask(valid, Z.shape[0])
    scores = np.clip(sigmoid(mlp_logits(Z, params)), SCORE_EPS, 1.0 - SCORE_EPS)
    return ScoreVector(scores, v, select(scores, v))


def score_candidates(F_i: np.ndarray, F_l: np.ndarray, alpha, params: ModelParams,
                     valid: Optional[np.ndarray] = None) -> ScoreVector:
    Ra = cross_attention(F_i, F_l, params.Wq)
    return fuse_and_score(Ra, alpha, F_l, params, valid)


class Prediction(NamedTuple):
    selected: int
    scores: ScoreVector
    mask: Mask


def predict(scene: SceneGraph, dep: DependencyGraph, alpha: Union[AlignmentMap, np.ndarray],
            params: ModelParams, valid: Optional[np.ndarray] = None) -> Prediction:
    """Pick one candidate object and return its stored mask as the segmentation."""
    if not scene.has_features:
        raise DataError("missing object features", source=scene.image_id)
    if dep.embeddings is None:
        raise DataError("missing token embeddings", source=dep.query_id)
    sv = score_candidates(scene.feature_matrix(), dep.embedding_matrix(), alpha, params, valid)
    return Prediction(sv.selected, sv, scene.objects[sv.selected].mask)
