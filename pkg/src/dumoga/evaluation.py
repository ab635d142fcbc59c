"""Segmentation metrics: IoU, mIoU / overall IoU, Precision@X."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .graphs import DataError, Mask

THRESHOLDS = (0.3, 0.4, 0.5, 0.6, 0.7)


def _overlap(a: Mask, b: Mask) -> tuple[int, int]:
    if a.shape != b.shape:
        raise ValueError(f"mask dimension mismatch: {a.shape} vs {b.shape}")
    da, db = a.decode(), b.decode()
    return int(np.count_nonzero(da & db)), int(np.count_nonzero(da | db))


def mask_iou(a: Mask, b: Mask) -> float:
    """Intersection over union; two empty masks score 0."""
    inter, union = _overlap(a, b)
    return inter / union if union else 0.0


@dataclass(frozen=True)
class EvalResult:
    query_id: str
    iou: float
    object_id: Optional[int] = None
    intersection: int = 0
    union: int = 0

    def __post_init__(self):
        if not 0.0 <= self.iou <= 1.0:
            raise ValueError(f"iou {self.iou} outside [0, 1]")


def evaluate(predictions: Iterable, gts: Iterable[tuple[str, Mask]]) -> list[EvalResult]:
    """Score predictions against ground truth, sorted by query id.

    Each prediction is ``(query_id, mask)`` or ``(query_id, mask, object_id)``.
    """
    gt_map: dict[str, Mask] = {}
    for qid, m in gts:
        if qid in gt_map:
            raise DataError(f"duplicate query_id {qid!r} in ground truth")
        gt_map[qid] = m
    seen = set()
    results = []
    for pred in predictions:
        qid, mask = pred[0], pred[1]
        obj = pred[2] if len(pred) > 2 else None
        if qid in seen:
            raise DataError(f"duplicate query_id {qid!r} in predictions")
        seen.add(qid)
        if qid not in gt_map:
            raise DataError(f"no ground truth for query_id {qid!r}")
        try:
            inter, union = _overlap(mask, gt_map[qid])
        except ValueError as exc:
            raise DataError(f"query_id {qid!r}: {exc}") from None
        results.append(EvalResult(qid, inter / union if union else 0.0, obj, inter, union))
    results.sort(key=lambda r: r.query_id)
    return results


@dataclass(frozen=True)
class Report:
    miou: float
    precision: dict = field(default_factory=dict)
    count: int = 0
    mode: str = "mean"

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "mIoU": self.miou,
            "precision": {f"P@{x}": p for x, p in self.precision.items()},
            "count": self.count,
        }

    def table(self) -> str:
        label = "mIoU" if self.mode == "mean" else "oIoU"
        cols = [label] + [f"P@{x}" for x in self.precision] + ["N"]
        vals = [f"{100 * self.miou:.2f}"] + [f"{100 * p:.2f}" for p in self.precision.values()] + [str(self.count)]
        widths = [max(len(c), len(v)) + 2 for c, v in zip(cols, vals)]
        header = "".join(c.rjust(w) for c, w in zip(cols, widths))
        row = "".join(v.rjust(w) for v, w in zip(vals, widths))
        return f"{header}\n{'-' * len(header)}\n{row}\n"


def report(results: Sequence[EvalResult], thresholds: Sequence[float] = THRESHOLDS,
           mode: str = "mean") -> Report:
    """Aggregate results.

    ``mode="mean"`` averages per-query IoU; ``mode="overall"`` accumulates
    intersections and unions over the whole set first.  Precision@X always
    counts queries with IoU strictly above X.
    """
    if not results:
        raise ValueError("cannot report on an empty result set")
    ious = [r.iou for r in results]
    if mode == "mean":
        headline = math.fsum(ious) / len(ious)
    elif mode == "overall":
        total_u = sum(r.union for r in results)
        headline = sum(r.intersection for r in results) / total_u if total_u else 0.0
    else:
        raise ValueError(f"unknown report mode {mode!r}")
    precision = {x: sum(iou > x for iou in ious) / len(ious) for x in sorted(thresholds)}
    return Report(headline, precision, len(results), mode)
