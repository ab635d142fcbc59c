"""End-to-end query construction from scene graphs, plus corpus statistics."""
from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

from ..graphs import MAX_QUERIES_PER_IMAGE, SceneGraph
from .llm import generate_query
from .prompts import DEFAULT_MAX_WORDS, PromptTemplate, make_bundle
from .rewrite import pluralize, rewrite_suffixes
from .triplets import Lexicon, filter_candidates, object_references, target_triplets, triplets_to_sentences

log = logging.getLogger(__name__)


def has_suffix(text: str, labels) -> bool:
    return any(re.search(rf"(?<![\w]){re.escape(lb)}\d", text, flags=re.I) for lb in labels)


@dataclass(frozen=True)
class GeneratedQuery:
    query_id: str
    image_id: str
    target_object_id: int
    raw: str
    final: str
    flagged_for_review: bool = False

    @property
    def word_count(self) -> int:
        return len(self.final.split())

    def to_json(self, scene: Optional[SceneGraph] = None) -> dict:
        doc = {
            "query_id": self.query_id,
            "image_id": self.image_id,
            "target_object_id": self.target_object_id,
            "raw": self.raw,
            "final": self.final,
            "text": self.final,
            "flagged_for_review": self.flagged_for_review,
        }
        if scene is not None:
            doc.update(scene.objects[self.target_object_id].mask.to_json())
        return doc

    @classmethod
    def from_json(cls, doc: Mapping) -> "GeneratedQuery":
        final = doc.get("final", doc.get("text", ""))
        return cls(str(doc["query_id"]), str(doc["image_id"]), int(doc.get("target_object_id", -1)),
                   doc.get("raw", final), final, bool(doc.get("flagged_for_review", False)))


def mention_set(scene: SceneGraph, object_id: int) -> frozenset:
    """Labels a relation-only description of ``object_id`` can draw on."""
    labels = {scene.objects[object_id].label}
    for r in scene.relations:
        if r.subject_id == object_id:
            labels.add(scene.objects[r.object_id].label)
        elif r.object_id == object_id:
            labels.add(scene.objects[r.subject_id].label)
    return frozenset(labels)


def is_ambiguous(scene: SceneGraph, object_id: int) -> bool:
    """True when another object with the same label has the same mention set."""
    label = scene.objects[object_id].label
    mine = mention_set(scene, object_id)
    return any(o.id != object_id and o.label == label and mention_set(scene, o.id) == mine
               for o in scene.objects)


@dataclass(frozen=True)
class _Job:
    query_id: str
    image_id: str
    target: int
    bundle: object


def plan_jobs(scenes: Sequence[SceneGraph], lexicon: Mapping[str, str], template: PromptTemplate,
              max_words: int, min_relations: int) -> list[_Job]:
    jobs = []
    for sg in sorted(scenes, key=lambda s: s.image_id):
        refs = object_references(sg)
        candidates = filter_candidates(sg, min_relations)[:MAX_QUERIES_PER_IMAGE]
        for oid in candidates:
            sentences = triplets_to_sentences(target_triplets(sg, oid, refs), lexicon)
            bundle = make_bundle(refs[oid], sentences, template, max_words)
            jobs.append(_Job(f"{sg.image_id}_{oid}", sg.image_id, oid, bundle))
    return jobs


def build_corpus(scenes: Sequence[SceneGraph], client, lexicon: Optional[Mapping[str, str]] = None,
                 template: Optional[PromptTemplate] = None, max_words: int = DEFAULT_MAX_WORDS,
                 min_relations: int = 2, concurrency: int = 4) -> list[GeneratedQuery]:
    """Generate one query per candidate object.

    Requests run on up to ``concurrency`` threads; results are returned sorted
    by query id.  Queries longer than ``max_words`` after rewriting, or still
    carrying a suffix, are dropped.
    """
    lexicon = Lexicon.load() if lexicon is None else lexicon
    template = PromptTemplate.default() if template is None else template
    by_id = {sg.image_id: sg for sg in scenes}
    jobs = plan_jobs(scenes, lexicon, template, max_words, min_relations)

    def run(job: _Job) -> str:
        return generate_query(job.bundle, client, template)

    with ThreadPoolExecutor(max_workers=max(1, concurrency)) as pool:
        raws = list(pool.map(run, jobs))

    out = []
    dropped = 0
    for job, raw in zip(jobs, raws):
        sg = by_id[job.image_id]
        labels = {o.label for o in sg.objects}
        final = rewrite_suffixes(raw.strip(), labels)
        if len(final.split()) > max_words or has_suffix(final, labels):
            dropped += 1
            continue
        out.append(GeneratedQuery(job.query_id, job.image_id, job.target, raw, final, is_ambiguous(sg, job.target)))
    if dropped:
        log.info("dropped %d queries over %d words or with leftover suffixes", dropped, max_words)
    out.sort(key=lambda q: q.query_id)
    return out


@dataclass(frozen=True)
class CorpusStats:
    images: int = 0
    queries: int = 0
    avg_query_length: float = 0.0
    avg_objects_per_query: float = 0.0

    def to_json(self) -> dict:
        return {"images": self.images, "queries": self.queries,
                "avg_query_length": self.avg_query_length,
                "avg_objects_per_query": self.avg_objects_per_query}


def labels_mentioned(text: str, labels) -> set:
    low = text.lower()
    found = set()
    for lb in labels:
        forms = {lb.lower(), pluralize(lb.lower())}
        if any(re.search(rf"(?<![\w]){re.escape(f)}(?![\w])", low) for f in forms):
            found.add(lb)
    return found


def corpus_stats(queries: Sequence[GeneratedQuery], scenes: Mapping[str, SceneGraph]) -> CorpusStats:
    """Image/query counts, mean word count, and mean distinct labels mentioned."""
    if not queries:
        return CorpusStats()
    lengths = [len(q.final.split()) for q in queries]
    objects = []
    for q in queries:
        sg = scenes.get(q.image_id)
        objects.append(len(labels_mentioned(q.final, {o.label for o in sg.objects})) if sg else 0)
    return CorpusStats(
        images=len({q.image_id for q in queries}),
        queries=len(queries),
        avg_query_length=sum(lengths) / len(lengths),
        avg_objects_per_query=sum(objects) / len(objects),
    )


def export_review(queries: Sequence[GeneratedQuery], path) -> None:
    """Write a JSON Lines review queue with an empty ``decision`` per query."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for q in sorted(queries, key=lambda q: q.query_id):
            fh.write(json.dumps({"query_id": q.query_id, "raw": q.raw, "final": q.final, "decision": ""},
                                ensure_ascii=False) + "\n")


def import_review(path) -> dict[str, str]:
    decisions = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                doc = json.loads(line)
                decisions[str(doc["query_id"])] = str(doc.get("decision", ""))
    return decisions


def apply_review(queries: Sequence[GeneratedQuery], decisions: Mapping[str, str]) -> list[GeneratedQuery]:
    """Apply annotator decisions.

    ``"drop"`` removes a query, ``""`` or ``"keep"`` keeps it, and any other
    text replaces its final wording.
    """
    out = []
    for q in queries:
        d = decisions.get(q.query_id, "").strip()
        if d.lower() == "drop":
            continue
        if d and d.lower() != "keep":
            q = GeneratedQuery(q.query_id, q.image_id, q.target_object_id, q.raw, d, False)
        out.append(q)
    return out
