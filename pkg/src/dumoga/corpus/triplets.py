"""Candidate filtering, object references, and triplet-to-sentence rendering."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping, Optional, Sequence

from ..graphs import SceneGraph


@dataclass(frozen=True)
class Triplet:
    """``<subject, object, predicate>`` with suffixed references such as ``person2``."""

    subject: str
    object: str
    predicate: str

    def __post_init__(self):
        if not self.predicate:
            raise ValueError("empty predicate")


def filter_candidates(scene: SceneGraph, min_relations: int = 2) -> list[int]:
    """Ids of objects taking part in at least ``min_relations`` relations."""
    degree = Counter()
    for r in scene.relations:
        degree[r.subject_id] += 1
        degree[r.object_id] += 1
    return [o.id for o in scene.objects if degree[o.id] >= min_relations]


def object_references(scene: SceneGraph) -> dict[int, str]:
    """Names used in prompts.

    Labels that occur once keep the bare label; repeated labels get numeric
    suffixes 1..k in object-id order.
    """
    counts = Counter(o.label for o in scene.objects)
    seen: Counter = Counter()
    refs = {}
    for o in scene.objects:
        if counts[o.label] > 1:
            seen[o.label] += 1
            refs[o.id] = f"{o.label}{seen[o.label]}"
        else:
            refs[o.id] = o.label
    return refs


def target_triplets(scene: SceneGraph, target_id: int,
                    refs: Optional[Mapping[int, str]] = None) -> list[Triplet]:
    """Relations involving ``target_id``, in scene order."""
    refs = object_references(scene) if refs is None else refs
    return [
        Triplet(refs[r.subject_id], refs[r.object_id], r.predicate)
        for r in scene.relations
        if target_id in (r.subject_id, r.object_id)
    ]


class Lexicon(dict):
    """Predicate -> verb phrase map."""

    @classmethod
    def parse(cls, text: str) -> "Lexicon":
        lex = cls()
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"lexicon line {lineno}: expected 'predicate = verb phrase'")
            pred, phrase = (part.strip() for part in line.split("=", 1))
            if not pred or not phrase:
                raise ValueError(f"lexicon line {lineno}: empty predicate or phrase")
            lex[pred] = phrase
        return lex

    @classmethod
    def load(cls, path=None) -> "Lexicon":
        if path is None:
            text = resources.files("dumoga.corpus").joinpath("data/predicates.txt").read_text(encoding="utf-8")
        else:
            text = Path(path).read_text(encoding="utf-8")
        return cls.parse(text)


class UnknownPredicate(KeyError):
    def __str__(self):
        return f"unknown predicate {self.args[0]!r} (not in lexicon)"


def triplets_to_sentences(triplets: Sequence[Triplet], lexicon: Optional[Mapping[str, str]] = None) -> list[str]:
    """Render each triplet as ``the {subject} {verb phrase} the {object}``."""
    lexicon = Lexicon.load() if lexicon is None else lexicon
    out = []
    for t in triplets:
        phrase = lexicon.get(t.predicate)
        if phrase is None:
            raise UnknownPredicate(t.predicate)
        out.append(f"the {t.subject} {phrase} the {t.object}")
    return out
