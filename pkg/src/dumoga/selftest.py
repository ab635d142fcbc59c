"""Fast invariant checks bundled with the package (``dumoga selftest``)."""
from __future__ import annotations

import math
from typing import Callable

import numpy as np

from . import structal
from .corpus import rewrite_suffixes, triplets_to_sentences, Triplet
from .evaluation import EvalResult, mask_iou, report
from .featalign import ModelParams
from .graphs import Mask, mask_decode, mask_encode
from .synthetic import random_dependency_graph, random_scene_graph
from .training import TrainExample, bce_loss, loss_and_grad, mean_loss


def _mask_roundtrip():
    rng = np.random.default_rng(0)
    for _ in range(200):
        h, w = rng.integers(1, 9, size=2)
        b = rng.random((h, w)) < rng.random()
        assert np.array_equal(mask_decode(mask_encode(b)), b)


def _kernel_and_nystrom():
    rng = np.random.default_rng(1)
    for k in range(10):
        n, l = int(rng.integers(1, 7)), int(rng.integers(1, 7))  # noqa: E741
        g = structal.UnionGraph.from_graphs(random_scene_graph(rng, n), random_dependency_graph(rng, l))
        sigs = structal.signatures(g)
        S = structal.similarity_matrix(sigs)
        assert np.allclose(S, S.T) and np.all(np.diag(S) == 1.0)
        assert np.linalg.eigvalsh(S).min() >= -1e-9
        P = structal.landmark_embed(sigs, g.size, seed=k)
        assert np.max(np.abs(P @ P.T - S)) < 1e-6


def _gradient():
    rng = np.random.default_rng(2)
    dv, dt, h = 4, 3, 5
    params = ModelParams(rng.normal(size=(dv, dt)), rng.normal(size=(2 * dt, h)) * 0.5,
                         rng.normal(size=h) * 0.1, rng.normal(size=(h, 1)) * 0.5, np.array(0.1))
    batch = [TrainExample(str(e), rng.normal(size=(3, dv)), rng.normal(size=(4, dt)),
                          rng.uniform(0.1, 1.0, size=(3, 4)), np.ones(3, dtype=bool), e % 3) for e in range(2)]
    _, g = loss_and_grad(params, batch)
    base = params.tensors()
    for name, arr in base.items():
        for idx in list(np.ndindex(arr.shape))[:6]:
            plus = {k: v.copy() for k, v in base.items()}
            minus = {k: v.copy() for k, v in base.items()}
            plus[name][idx] += 1e-5
            minus[name][idx] -= 1e-5
            fd = (mean_loss(ModelParams.from_tensors(plus), batch)
                  - mean_loss(ModelParams.from_tensors(minus), batch)) / 2e-5
            assert abs(fd - g[name][idx]) <= 1e-4 * max(abs(fd), abs(g[name][idx]), 1e-6)


def _loss_values():
    assert abs(bce_loss(np.array([0.5, 0.5]), 0) - 2 * math.log(2)) < 1e-9
    assert abs(bce_loss(np.array([0.9, 0.1]), 0) - 0.210721031315653) < 1e-9


def _metrics():
    a = np.zeros((4, 4), dtype=bool)
    b = np.zeros((4, 4), dtype=bool)
    a[0:3, 0:3] = True
    b[1:4, 1:4] = True
    assert abs(mask_iou(mask_encode(a), mask_encode(b)) - 4 / 14) < 1e-12
    rep = report([EvalResult("a", 0.8), EvalResult("b", 0.4), EvalResult("c", 0.2)])
    assert abs(rep.miou - 1.4 / 3) < 1e-12 and rep.precision[0.3] == 2 / 3 and rep.precision[0.7] == 1 / 3
    assert mask_iou(Mask(2, 2, (4,)), Mask(2, 2, (4,))) == 0.0


def _corpus():
    assert triplets_to_sentences([Triplet("person", "book", "holding")]) == ["the person is holding the book"]
    assert rewrite_suffixes("person1 is next to person2") == "the person is next to another person"
    assert (rewrite_suffixes("the floor has person1, person2, and person3 standing on it")
            == "the floor has multiple people standing on it")


CHECKS: dict[str, Callable[[], None]] = {
    "mask round trip": _mask_roundtrip,
    "kernel PSD and landmark exactness": _kernel_and_nystrom,
    "analytic gradient vs finite differences": _gradient,
    "closed-form loss values": _loss_values,
    "metric fixtures": _metrics,
    "corpus goldens": _corpus,
}


def run_all(emit: Callable[[str], None] = print) -> bool:
    ok = True
    for name, check in CHECKS.items():
        try:
            check()
            emit(f"PASS  {name}")
        except AssertionError as exc:
            ok = False
            emit(f"FAIL  {name} {exc}".rstrip())
    return ok
