"""Random fixtures: graphs for oracle checks and a separable training corpus."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

import numpy as np

from .graphs import (
    DependencyGraph, Mask, ObjectNode, QueryRecord, RelationEdge, SceneGraph, Token,
    dependency_to_json, mask_encode, scene_to_json, write_jsonl, write_matrix,
)
from .training import TrainExample

LABELS = ("person", "cup", "table", "wall", "dog", "car", "tree", "chair", "book", "bus")
PREDICATES = ("holding", "next to", "on", "near", "behind", "leaning on", "sitting on", "has")
WORDS = ("the", "a", "man", "is", "holding", "red", "cup", "near", "table", "and", "next", "to", "wall")


def random_scene_graph(rng: np.random.Generator, n: int, n_relations: Optional[int] = None,
                       size: tuple[int, int] = (16, 16), image_id: str = "img",
                       feature_dim: Optional[int] = None) -> SceneGraph:
    """Scene with ``n`` rectangular objects and random directed relations."""
    h, w = size
    objects = []
    for j in range(n):
        y0, x0 = int(rng.integers(0, h - 1)), int(rng.integers(0, w - 1))
        y1, x1 = int(rng.integers(y0 + 1, h + 1)), int(rng.integers(x0 + 1, w + 1))
        bitmap = np.zeros((h, w), dtype=bool)
        bitmap[y0:y1, x0:x1] = True
        feat = None if feature_dim is None else rng.normal(size=feature_dim)
        objects.append(ObjectNode(j, str(rng.choice(LABELS)), (x0, y0, x1 - x0, y1 - y0), mask_encode(bitmap), feat))
    if n_relations is None:
        n_relations = int(rng.integers(0, 2 * n + 1)) if n > 1 else 0
    relations = []
    if n > 1:
        for _ in range(n_relations):
            a, b = rng.choice(n, size=2, replace=False)
            relations.append(RelationEdge(int(a), int(b), str(rng.choice(PREDICATES))))
    return SceneGraph(image_id, w, h, tuple(objects), tuple(relations))


def random_dependency_graph(rng: np.random.Generator, l: int, query_id: str = "q",  # noqa: E741
                            text_dim: Optional[int] = None) -> DependencyGraph:
    """Random tree: each token's head is drawn from the tokens attached before it."""
    order = rng.permutation(l)
    heads = [-1] * l
    for pos in range(1, l):
        heads[order[pos]] = int(order[rng.integers(0, pos)])
    tokens = tuple(Token(i, str(rng.choice(WORDS)), heads[i], "dep" if heads[i] >= 0 else "root") for i in range(l))
    emb = None if text_dim is None else rng.normal(size=(l, text_dim))
    return DependencyGraph(query_id, tokens, emb)


def separable_dataset(n_queries: int = 64, n_candidates: int = 5, visual_dim: int = 1024,
                      text_dim: int = 768, seed: int = 0, signal: float = 5.0,
                      margin: float = 0.5) -> list[TrainExample]:
    """Queries whose target is separable from distractors by one fixed direction.

    Every token embedding carries a shared unit direction ``u`` scaled by
    ``signal``.  The target object's alignment row is large and distractor
    rows small, so the aligned-text half of the fused input projects onto
    ``[0; u]`` above a global threshold for targets and below it for
    distractors.  Queries violating that margin are redrawn.
    """
    rng = np.random.default_rng(seed)
    u = rng.normal(size=text_dim)
    u /= np.linalg.norm(u)
    threshold = signal * 2.6
    out = []
    while len(out) < n_queries:
        l = int(rng.integers(4, 9))  # noqa: E741
        F_l = signal * u + rng.normal(size=(l, text_dim))
        alpha = rng.uniform(0.02, 0.3, size=(n_candidates, l))
        g = int(rng.integers(n_candidates))
        alpha[g] = rng.uniform(0.7, 1.0, size=l)
        proj = (alpha @ F_l) @ u
        others = np.delete(proj, g)
        if proj[g] < threshold + margin or others.max() > threshold - margin:
            continue
        F_i = rng.normal(size=(n_candidates, visual_dim))
        out.append(TrainExample(f"q{len(out):04d}", F_i, F_l, alpha, np.ones(n_candidates, dtype=bool), g))
    return out


def write_dataset(root, n_images: int = 4, queries_per_image: int = 2, visual_dim: int = 16,
                  text_dim: int = 12, seed: int = 0) -> Path:
    """Write a small on-disk dataset in the layout the ``train``/``infer`` commands read.

    Layout: ``queries.jsonl``, ``scenes/<image>.json``, ``features/<image>.bin``,
    ``deps/<query>.json``, ``embeddings/<query>.bin``.
    """
    root = Path(root)
    for sub in ("scenes", "features", "deps", "embeddings"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    queries = []
    for k in range(n_images):
        image_id = f"img{k:03d}"
        n = int(rng.integers(2, 6))
        sg = random_scene_graph(rng, n, image_id=image_id)
        (root / "scenes" / f"{image_id}.json").write_text(_dumps(scene_to_json(sg)))
        write_matrix(root / "features" / f"{image_id}.bin", rng.normal(size=(n, visual_dim)))
        for m in range(queries_per_image):
            qid = f"{image_id}_q{m}"
            dg = random_dependency_graph(rng, int(rng.integers(3, 8)), qid)
            (root / "deps" / f"{qid}.json").write_text(_dumps(dependency_to_json(dg)))
            write_matrix(root / "embeddings" / f"{qid}.bin", rng.normal(size=(dg.l, text_dim)))
            target = int(rng.integers(n))
            text = " ".join(t.text for t in dg.tokens)
            queries.append(QueryRecord(qid, image_id, text, target, sg.objects[target].mask).to_json())
    write_jsonl(root / "queries.jsonl", queries)
    return root


def _dumps(doc) -> str:
    return json.dumps(doc, indent=1) + "\n"


def random_mask(rng: np.random.Generator, h: int, w: int, p: float = 0.5) -> Mask:
    return mask_encode(rng.random((h, w)) < p)
