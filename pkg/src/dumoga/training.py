"""Target assignment, BCE objective with exact gradients, and AdamW training."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .evaluation import mask_iou
from .featalign import SCORE_EPS, ModelParams, ScoreVector, score_candidates, sigmoid, softmax_rows
from .graphs import DependencyGraph, Mask, QueryRecord, SceneGraph
from .structal import AlignmentMap

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class TrainExample:
    """Inputs of one query.  ``alpha`` and ``F_l`` are treated as constants."""

    query_id: str
    F_i: np.ndarray
    F_l: np.ndarray
    alpha: np.ndarray
    valid: np.ndarray
    target: Optional[int] = None

    def __post_init__(self):
        n, l = self.F_i.shape[0], self.F_l.shape[0]  # noqa: E741
        if self.alpha.shape != (n, l):
            raise ValueError(f"{self.query_id}: alpha shape {self.alpha.shape} != ({n}, {l})")
        if self.valid.shape != (n,):
            raise ValueError(f"{self.query_id}: validity mask shape {self.valid.shape} != ({n},)")
        if self.target is not None and not (0 <= self.target < n and self.valid[self.target]):
            raise ValueError(f"{self.query_id}: target {self.target} is not a valid slot")

    @property
    def n(self) -> int:
        return self.F_i.shape[0]


def make_example(scene: SceneGraph, dep: DependencyGraph, alpha: Union[AlignmentMap, np.ndarray],
                 query: Optional[QueryRecord] = None) -> TrainExample:
    """Assemble a training example; the target comes from max-IoU matching
    against the query's ground-truth mask, else from its target object id."""
    a = np.asarray(alpha.alpha if isinstance(alpha, AlignmentMap) else alpha, dtype=np.float64)
    target = None
    if query is not None:
        if query.gt_mask is not None:
            target = assign_target([o.mask for o in scene.objects], query.gt_mask)
        else:
            target = query.target_object_id
    return TrainExample(dep.query_id, scene.feature_matrix(), dep.embedding_matrix(), a,
                        np.ones(scene.n, dtype=bool), target)


def assign_target(candidates: Sequence[Mask], gt: Mask) -> Optional[int]:
    """Index of the candidate with the highest IoU against ``gt``.

    Returns None when every candidate has zero overlap.
    """
    if not candidates:
        raise ValueError("empty candidate list")
    ious = [mask_iou(c, gt) for c in candidates]
    best = int(np.argmax(ious))
    return best if ious[best] > 0.0 else None


def bce_loss(scores: Union[ScoreVector, np.ndarray], g: int, valid: Optional[np.ndarray] = None) -> float:
    if isinstance(scores, ScoreVector):
        s, v = scores.scores, scores.valid
    else:
        s = np.asarray(scores, dtype=np.float64)
        v = np.ones(len(s), dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    if not (0 <= g < len(s)) or not v[g]:
        raise ValueError(f"target index {g} is not a valid slot")
    s = np.clip(s, SCORE_EPS, 1.0 - SCORE_EPS)
    k = np.zeros(len(s))
    k[g] = 1.0
    terms = -k * np.log(s) - (1.0 - k) * np.log1p(-s)
    return float(np.sum(terms[v]))


def _supervised(batch: Sequence[TrainExample]) -> list[TrainExample]:
    kept = [ex for ex in batch if ex.target is not None]
    if not kept:
        raise ValueError("batch has no examples with a target (all skipped)")
    return kept


def loss_and_grad(params: ModelParams, batch: Sequence[TrainExample]) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Per-example losses and gradients of the mean loss over ``batch``.

    Examples without a target are dropped first; the returned loss vector
    covers only the kept examples.
    """
    kept = _supervised(batch)
    B = len(kept)
    Wq, W1, b1, W2, b2 = (params.Wq, params.W1, params.b1, params.W2, params.b2)
    dt = params.text_dim
    scale = 1.0 / np.sqrt(dt)

    caches = []
    Zs = []
    for ex in kept:
        q = ex.F_i @ Wq
        P = softmax_rows(q @ ex.F_l.T * scale)
        Ra = P @ ex.F_l
        Zs.append(np.concatenate([Ra, ex.alpha @ ex.F_l], axis=1))
        caches.append(P)
    Z = np.concatenate(Zs, axis=0)
    Hpre = Z @ W1 + b1
    H = np.maximum(Hpre, 0.0)
    z = (H @ W2)[:, 0] + b2
    s_raw = sigmoid(z)
    s = np.clip(s_raw, SCORE_EPS, 1.0 - SCORE_EPS)

    K = np.zeros_like(z)
    V = np.zeros_like(z, dtype=bool)
    offsets = np.cumsum([0] + [ex.n for ex in kept])
    for e, ex in enumerate(kept):
        K[offsets[e] + ex.target] = 1.0
        V[offsets[e]:offsets[e + 1]] = ex.valid
    terms = np.where(V, -K * np.log(s) - (1.0 - K) * np.log1p(-s), 0.0)
    losses = np.array([terms[offsets[e]:offsets[e + 1]].sum() for e in range(B)])

    # d(mean loss)/dz; the clamp has zero slope outside (eps, 1 - eps)
    inside = (s_raw > SCORE_EPS) & (s_raw < 1.0 - SCORE_EPS)
    dz = np.where(V & inside, s_raw - K, 0.0) / B

    g = {}
    g["W2"] = H.T @ dz[:, None]
    g["b2"] = np.array(dz.sum())
    dHpre = (dz[:, None] @ W2.T) * (Hpre > 0)
    g["W1"] = Z.T @ dHpre
    g["b1"] = dHpre.sum(axis=0)
    dRa_all = dHpre @ W1[:dt].T

    dq_all = []
    for e, ex in enumerate(kept):
        P = caches[e]
        dRa = dRa_all[offsets[e]:offsets[e + 1]]
        dP = dRa @ ex.F_l.T
        dA = P * (dP - np.sum(dP * P, axis=1, keepdims=True))
        dq_all.append(dA @ ex.F_l * scale)
    F_i_all = np.concatenate([ex.F_i for ex in kept], axis=0)
    g["Wq"] = F_i_all.T @ np.concatenate(dq_all, axis=0)
    return losses, g


def grad(params: ModelParams, batch: Sequence[TrainExample]) -> dict[str, np.ndarray]:
    return loss_and_grad(params, batch)[1]


def mean_loss(params: ModelParams, batch: Sequence[TrainExample]) -> float:
    return float(np.mean(loss_and_grad(params, batch)[0]))


@dataclass
class OptimizerState:
    """AdamW state with decoupled weight decay."""

    lr: float = 2e-5
    batch_size: int = 64
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.lr < 0 or self.weight_decay < 0:
            raise ValueError("learning rate and weight decay must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1) or self.eps <= 0:
            raise ValueError("invalid Adam coefficients")


def adamw_step(params: ModelParams, grads: dict[str, np.ndarray], opt: OptimizerState) -> ModelParams:
    opt.step += 1
    t = opt.step
    bc1 = 1.0 - opt.beta1 ** t
    bc2 = 1.0 - opt.beta2 ** t
    new = {}
    for name, theta in params.tensors().items():
        gr = grads[name]
        m = opt.m.get(name)
        v = opt.v.get(name)
        m = opt.beta1 * (m if m is not None else np.zeros_like(theta)) + (1 - opt.beta1) * gr
        v = opt.beta2 * (v if v is not None else np.zeros_like(theta)) + (1 - opt.beta2) * gr * gr
        opt.m[name], opt.v[name] = m, v
        update = (m / bc1) / (np.sqrt(v / bc2) + opt.eps)
        new[name] = theta * (1.0 - opt.lr * opt.weight_decay) - opt.lr * update
    return ModelParams.from_tensors(new)


@dataclass
class TrainResult:
    params: ModelParams
    history: list[float]


def train(dataset: Sequence[TrainExample], params: ModelParams, opt: OptimizerState, epochs: int,
          seed: int = 42, patience: Optional[int] = 20, min_delta: float = 1e-5,
          on_epoch: Optional[Callable[[int, float], None]] = None) -> TrainResult:
    """Mini-batch AdamW over seeded per-epoch shuffles.

    The history holds one mean loss per epoch, each example's loss taken
    before the update of its own batch.  Training stops early once the best
    loss has not improved by ``min_delta`` for ``patience`` epochs.
    """
    data = [ex for ex in dataset if ex.target is not None]
    if not data:
        raise ValueError("dataset has no supervised examples")
    if len(data) < len(dataset):
        log.info("skipping %d examples without a target", len(dataset) - len(data))
    rng = np.random.default_rng(seed)
    history: list[float] = []
    best, stale = np.inf, 0
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(data))
        per_example = np.zeros(len(data))
        for start in range(0, len(data), opt.batch_size):
            idx = order[start:start + opt.batch_size]
            losses, grads = loss_and_grad(params, [data[i] for i in idx])
            per_example[idx] = losses
            params = adamw_step(params, grads, opt)
        epoch_loss = float(np.mean(per_example))
        history.append(epoch_loss)
        if on_epoch is not None:
            on_epoch(epoch, epoch_loss)
        if epoch_loss < best - min_delta:
            best, stale = epoch_loss, 0
        else:
            stale += 1
            if patience is not None and stale >= patience:
                log.info("early stop at epoch %d (no improvement for %d epochs)", epoch, stale)
                break
    return TrainResult(params, history)


def selection_accuracy(params: ModelParams, dataset: Sequence[TrainExample]) -> float:
    data = [ex for ex in dataset if ex.target is not None]
    if not data:
        raise ValueError("dataset has no supervised examples")
    hits = sum(score_candidates(ex.F_i, ex.F_l, ex.alpha, params, ex.valid).selected == ex.target for ex in data)
    return hits / len(data)

