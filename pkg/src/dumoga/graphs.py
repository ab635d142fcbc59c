"""Domain types for both modalities plus file ingestion.

Scene graphs and dependency graphs are read from JSON; per-image visual
features and per-query token embeddings from a small binary matrix format
(``DGF1``).  Everything returned here is validated and immutable.
"""
from __future__ import annotations

import json
import struct
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

DEFAULT_MAX_OBJECTS = 10
DEFAULT_VISUAL_DIM = 1024
DEFAULT_TEXT_DIM = 768
MAX_QUERIES_PER_IMAGE = 10

FEATURE_MAGIC = b"DGF1"


class DataError(ValueError):
    """Malformed or inconsistent input data.

    ``field`` names the offending location inside the document, e.g.
    ``objects[2].rle``.
    """

    def __init__(self, message: str, field: str = "", source: str = ""):
        self.reason = message
        self.field = field
        self.source = source
        where = ": ".join(p for p in (source, field) if p)
        super().__init__(f"{where}: {message}" if where else message)


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------------------
# masks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Mask:
    """Binary mask stored as uncompressed row-major run lengths.

    Runs alternate background/foreground and always start with a background
    run, which may be 0.
    """

    height: int
    width: int
    counts: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
        if self.height < 1 or self.width < 1:
            raise DataError(f"mask dimensions must be >= 1, got {self.height}x{self.width}")
        if any(c < 0 for c in self.counts):
            raise DataError("negative run length in RLE counts")
        total = sum(self.counts)
        if total != self.height * self.width:
            raise DataError(
                f"RLE sum mismatch (counts sum to {total}, expected {self.height * self.width})"
            )

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def area(self) -> int:
        return sum(self.counts[1::2])

    def decode(self) -> np.ndarray:
        return mask_decode(self)

    def to_json(self) -> dict:
        return {"h": self.height, "w": self.width, "rle": list(self.counts)}

    @classmethod
    def from_bitmap(cls, bitmap) -> "Mask":
        return mask_encode(bitmap)


def mask_decode(m: Mask) -> np.ndarray:
    """Expand a mask into a ``height x width`` boolean array."""
    values = np.arange(len(m.counts)) % 2 == 1
    flat = np.repeat(values, m.counts)
    return flat.reshape(m.height, m.width)


def mask_encode(bitmap) -> Mask:
    """Run-length encode a 2-D binary array into canonical form."""
    arr = np.asarray(bitmap)
    if arr.ndim != 2 or arr.size == 0:
        raise DataError(f"cannot encode an empty or non-2D bitmap (shape {arr.shape})")
    flat = arr.astype(bool).ravel()
    edges = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], edges, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return Mask(arr.shape[0], arr.shape[1], tuple(runs))


# ---------------------------------------------------------------------------
# scene side
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ObjectNode:
    id: int
    label: str
    bbox: tuple[float, float, float, float]
    mask: Mask
    feature: Optional[np.ndarray] = None

    def __eq__(self, other):
        if not isinstance(other, ObjectNode):
            return NotImplemented
        if (self.id, self.label, self.bbox, self.mask) != (other.id, other.label, other.bbox, other.mask):
            return False
        if self.feature is None or other.feature is None:
            return self.feature is None and other.feature is None
        return bool(np.array_equal(self.feature, other.feature))

    __hash__ = None


@dataclass(frozen=True)
class RelationEdge:
    subject_id: int
    object_id: int
    predicate: str


@dataclass(frozen=True, eq=False)
class SceneGraph:
    image_id: str
    width: int
    height: int
    objects: tuple[ObjectNode, ...]
    relations: tuple[RelationEdge, ...] = ()

    def __eq__(self, other):
        if not isinstance(other, SceneGraph):
            return NotImplemented
        return (
            (self.image_id, self.width, self.height, self.relations)
            == (other.image_id, other.width, other.height, other.relations)
            and len(self.objects) == len(other.objects)
            and all(a == b for a, b in zip(self.objects, other.objects))
        )

    __hash__ = None

    @property
    def n(self) -> int:
        return len(self.objects)

    @property
    def has_features(self) -> bool:
        return self.n > 0 and all(o.feature is not None for o in self.objects)

    def feature_matrix(self) -> np.ndarray:
        """Stack object features into an ``n x D_v`` array."""
        if not self.has_features:
            raise DataError("scene graph has no object features", source=self.image_id)
        return np.stack([o.feature for o in self.objects]).astype(np.float64)

    def degree(self, object_id: int) -> int:
        return sum((r.subject_id == object_id) + (r.object_id == object_id) for r in self.relations)

    def with_features(self, features: np.ndarray) -> "SceneGraph":
        features = np.asarray(features)
        if features.ndim != 2 or features.shape[0] != self.n:
            raise DataError(
                f"feature row-count mismatch ({features.shape[0] if features.ndim == 2 else features.shape} rows for {self.n} objects)",
                source=self.image_id,
            )
        objs = tuple(
            ObjectNode(o.id, o.label, o.bbox, o.mask, _frozen(np.array(features[i], dtype=np.float64)))
            for i, o in enumerate(self.objects)
        )
        return SceneGraph(self.image_id, self.width, self.height, objs, self.relations)


def validate_scene_graph(sg: SceneGraph, max_objects: int = DEFAULT_MAX_OBJECTS,
                         feature_dim: Optional[int] = None) -> SceneGraph:
    src = sg.image_id
    if sg.width < 1 or sg.height < 1:
        raise DataError(f"image dimensions must be >= 1, got {sg.width}x{sg.height}", "width/height", src)
    if sg.n > max_objects:
        raise DataError(f"too many objects ({sg.n} > max {max_objects})", "objects", src)
    seen = set()
    for i, o in enumerate(sg.objects):
        if o.id in seen:
            raise DataError(f"duplicate object id {o.id}", f"objects[{i}].id", src)
        seen.add(o.id)
    if seen != set(range(sg.n)):
        raise DataError(f"object ids must be exactly 0..{sg.n - 1}, got {sorted(seen)}", "objects", src)
    dims = None
    for i, o in enumerate(sg.objects):
        x, y, w, h = o.bbox
        if w < 0 or h < 0 or x < 0 or y < 0 or x + w > sg.width or y + h > sg.height:
            raise DataError(f"bbox {list(o.bbox)} outside {sg.width}x{sg.height} image", f"objects[{i}].bbox", src)
        if o.mask.shape != (sg.height, sg.width):
            raise DataError(
                f"mask is {o.mask.height}x{o.mask.width}, image is {sg.height}x{sg.width}",
                f"objects[{i}].rle", src,
            )
        if o.feature is not None:
            d = feature_dim if feature_dim is not None else (dims if dims is not None else len(o.feature))
            if len(o.feature) != d:
                raise DataError(f"feature length {len(o.feature)} != {d}", f"objects[{i}].feature", src)
            dims = d
    for k, r in enumerate(sg.relations):
        for name, ref in (("sub", r.subject_id), ("obj", r.object_id)):
            if ref not in seen:
                raise DataError(f"dangling relation id {ref}", f"relations[{k}].{name}", src)
        if r.subject_id == r.object_id:
            raise DataError(f"self relation on object {r.subject_id}", f"relations[{k}]", src)
        if not r.predicate:
            raise DataError("empty predicate", f"relations[{k}].pred", src)
    return sg


def _require(doc: Mapping, key: str, types, path: str, src: str):
    if key not in doc:
        raise DataError(f"missing field '{key}'", f"{path}{key}", src)
    val = doc[key]
    if not isinstance(val, types) or isinstance(val, bool):
        raise DataError(f"field '{key}' has wrong type {type(val).__name__}", f"{path}{key}", src)
    return val


def parse_scene_graph(doc, source: str = "", max_objects: int = DEFAULT_MAX_OBJECTS) -> SceneGraph:
    if not isinstance(doc, dict):
        raise DataError("scene graph document must be a JSON object", source=source)
    image_id = str(_require(doc, "image_id", (str, int), "", source))
    width = _require(doc, "width", int, "", source)
    height = _require(doc, "height", int, "", source)
    raw_objects = _require(doc, "objects", list, "", source)
    raw_relations = doc.get("relations", [])
    if not isinstance(raw_relations, list):
        raise DataError("field 'relations' must be a list", "relations", source)

    objects = []
    for i, od in enumerate(raw_objects):
        p = f"objects[{i}]."
        if not isinstance(od, dict):
            raise DataError("object entry must be a JSON object", p[:-1], source)
        oid = _require(od, "id", int, p, source)
        label = _require(od, "label", str, p, source)
        bbox = _require(od, "bbox", list, p, source)
        if len(bbox) != 4 or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in bbox):
            raise DataError("bbox must be [x, y, w, h]", p + "bbox", source)
        rle = _require(od, "rle", list, p, source)
        if not all(isinstance(c, int) and not isinstance(c, bool) for c in rle):
            raise DataError("rle counts must be integers", p + "rle", source)
        try:
            mask = Mask(height, width, tuple(rle))
        except DataError as exc:
            raise DataError(exc.reason, p + "rle", source) from None
        objects.append(ObjectNode(oid, label, tuple(float(v) for v in bbox), mask))

    relations = []
    for k, rd in enumerate(raw_relations):
        p = f"relations[{k}]."
        if not isinstance(rd, dict):
            raise DataError("relation entry must be a JSON object", p[:-1], source)
        relations.append(RelationEdge(
            _require(rd, "sub", int, p, source),
            _require(rd, "obj", int, p, source),
            _require(rd, "pred", str, p, source),
        ))

    # duplicate check before sorting so the reported path points at the input
    counts = Counter(o.id for o in objects)
    for i, o in enumerate(objects):
        if counts[o.id] > 1:
            raise DataError(f"duplicate object id {o.id}", f"objects[{i}].id", source or image_id)
    objects.sort(key=lambda o: o.id)
    sg = SceneGraph(image_id, width, height, tuple(objects), tuple(relations))
    try:
        return validate_scene_graph(sg, max_objects)
    except DataError as exc:
        raise DataError(exc.reason, exc.field, source or image_id) from None


def _read_json(path) -> object:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed document: {exc}", source=str(path)) from None


def load_scene_graph(path, features=None, max_objects: int = DEFAULT_MAX_OBJECTS,
                     feature_dim: Optional[int] = None) -> SceneGraph:
    """Load and validate a scene-graph JSON file.

    ``features`` may be a path to a ``DGF1`` file or an ``n x D_v`` array; row
    ``j`` is attached to object ``j``.
    """
    sg = parse_scene_graph(_read_json(path), str(path), max_objects)
    if features is not None:
        mat = read_matrix(features) if isinstance(features, (str, Path)) else np.asarray(features)
        sg = sg.with_features(mat)
        if feature_dim is not None:
            validate_scene_graph(sg, max_objects, feature_dim)
    return sg


# ---------------------------------------------------------------------------
# text side
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Token:
    index: int
    text: str
    head: int
    deprel: str = ""


@dataclass(frozen=True, eq=False)
class DependencyGraph:
    query_id: str
    tokens: tuple[Token, ...]
    embeddings: Optional[np.ndarray] = None

    def __eq__(self, other):
        if not isinstance(other, DependencyGraph):
            return NotImplemented
        if (self.query_id, self.tokens) != (other.query_id, other.tokens):
            return False
        if self.embeddings is None or other.embeddings is None:
            return self.embeddings is None and other.embeddings is None
        return bool(np.array_equal(self.embeddings, other.embeddings))

    __hash__ = None

    @property
    def l(self) -> int:  # noqa: E743
        return len(self.tokens)

    @property
    def root(self) -> int:
        return next(t.index for t in self.tokens if t.head == -1)

    @property
    def heads(self) -> list[int]:
        return [t.head for t in self.tokens]

    def embedding_matrix(self) -> np.ndarray:
        if self.embeddings is None:
            raise DataError("dependency graph has no token embeddings", source=self.query_id)
        return np.asarray(self.embeddings, dtype=np.float64)

    def with_embeddings(self, emb: np.ndarray) -> "DependencyGraph":
        dg = DependencyGraph(self.query_id, self.tokens, _frozen(np.array(emb, dtype=np.float64)))
        return validate_dependency_graph(dg)


def validate_dependency_graph(dg: DependencyGraph, text_dim: Optional[int] = None) -> DependencyGraph:
    src = dg.query_id
    l = len(dg.tokens)
    if l < 1:
        raise DataError("dependency graph has no tokens", "tokens", src)
    heads = []
    for i, t in enumerate(dg.tokens):
        if t.index != i:
            raise DataError(f"token index {t.index} at position {i}", f"tokens[{i}]", src)
        if t.head == i:
            raise DataError(f"self-loop on token {i}", f"tokens[{i}].head", src)
        if not -1 <= t.head < l:
            raise DataError(f"head {t.head} out of range for {l} tokens", f"tokens[{i}].head", src)
        heads.append(t.head)
    roots = [i for i, h in enumerate(heads) if h == -1]
    if not roots:
        raise DataError("no root (no token has head -1)", "tokens", src)
    if len(roots) > 1:
        raise DataError(f"multiple roots at tokens {roots}", "tokens", src)
    for start in range(l):
        node, steps = start, 0
        while heads[node] != -1:
            node = heads[node]
            steps += 1
            if steps > l:
                raise DataError(f"cycle in head links through token {start}", f"tokens[{start}].head", src)
    if dg.embeddings is not None:
        emb = dg.embeddings
        if emb.ndim != 2 or emb.shape[0] != l:
            raise DataError(f"embedding row-count mismatch ({emb.shape[0]} rows for {l} tokens)", "embeddings", src)
        if text_dim is not None and emb.shape[1] != text_dim:
            raise DataError(f"embedding width {emb.shape[1]} != {text_dim}", "embeddings", src)
    return dg


def parse_dependency_graph(doc, source: str = "") -> DependencyGraph:
    if not isinstance(doc, dict):
        raise DataError("dependency document must be a JSON object", source=source)
    qid = str(_require(doc, "query_id", (str, int), "", source))
    raw = _require(doc, "tokens", list, "", source)
    tokens = []
    for i, td in enumerate(raw):
        p = f"tokens[{i}]."
        if not isinstance(td, dict):
            raise DataError("token entry must be a JSON object", p[:-1], source)
        tokens.append(Token(i, _require(td, "text", str, p, source), _require(td, "head", int, p, source),
                            str(td.get("rel", ""))))
    dg = DependencyGraph(qid, tuple(tokens))
    try:
        return validate_dependency_graph(dg)
    except DataError as exc:
        raise DataError(exc.reason, exc.field, source or qid) from None


def load_dependency_graph(path, embeddings=None, text_dim: Optional[int] = None) -> DependencyGraph:
    """Load a dependency-parse JSON file, optionally attaching ``l x D_t`` embeddings."""
    dg = parse_dependency_graph(_read_json(path), str(path))
    if embeddings is not None:
        mat = read_matrix(embeddings) if isinstance(embeddings, (str, Path)) else np.asarray(embeddings)
        try:
            dg = validate_dependency_graph(
                DependencyGraph(dg.query_id, dg.tokens, _frozen(np.array(mat, dtype=np.float64))), text_dim)
        except DataError as exc:
            raise DataError(exc.reason, exc.field, str(path)) from None
    return dg


# ---------------------------------------------------------------------------
# feature matrices (DGF1)
# ---------------------------------------------------------------------------


def write_matrix(path, matrix) -> None:
    mat = np.asarray(matrix, dtype="<f4")
    if mat.ndim != 2:
        raise DataError(f"feature matrix must be 2-D, got shape {mat.shape}")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<II", *mat.shape))
        fh.write(np.ascontiguousarray(mat).tobytes())


def read_matrix(path) -> np.ndarray:
    """Read a ``DGF1`` file into a float64 array."""
    data = Path(path).read_bytes()
    if data[:4] != FEATURE_MAGIC:
        raise DataError("bad magic bytes, expected DGF1", source=str(path))
    if len(data) < 12:
        raise DataError("truncated header", source=str(path))
    rows, cols = struct.unpack("<II", data[4:12])
    payload = data[12:]
    if len(payload) != rows * cols * 4:
        raise DataError(f"payload is {len(payload)} bytes, header declares {rows}x{cols} f32", source=str(path))
    mat = np.frombuffer(payload, dtype="<f4").reshape(rows, cols).astype(np.float64)
    if not np.all(np.isfinite(mat)):
        raise DataError("non-finite values in feature matrix", source=str(path))
    return mat


# ---------------------------------------------------------------------------
# queries
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QueryRecord:
    query_id: str
    image_id: str
    text: str
    target_object_id: Optional[int] = None
    gt_mask: Optional[Mask] = None

    def to_json(self) -> dict:
        doc = {"query_id": self.query_id, "image_id": self.image_id, "text": self.text}
        if self.target_object_id is not None:
            doc["target_object_id"] = self.target_object_id
        if self.gt_mask is not None:
            doc.update(self.gt_mask.to_json())
        return doc


def mask_from_json(doc: Mapping, path: str = "", source: str = "") -> Mask:
    for key in ("rle", "h", "w"):
        if key not in doc:
            raise DataError(f"missing field '{key}'", f"{path}{key}", source)
    try:
        return Mask(int(doc["h"]), int(doc["w"]), tuple(doc["rle"]))
    except (TypeError, ValueError) as exc:
        raise DataError(getattr(exc, "reason", str(exc)), f"{path}rle", source) from None


def parse_query(doc, source: str = "") -> QueryRecord:
    if not isinstance(doc, dict):
        raise DataError("query line must be a JSON object", source=source)
    gt = mask_from_json(doc, source=source) if "rle" in doc else None
    tgt = doc.get("target_object_id")
    if tgt is not None and (not isinstance(tgt, int) or isinstance(tgt, bool)):
        raise DataError("target_object_id must be an integer", "target_object_id", source)
    return QueryRecord(
        str(_require(doc, "query_id", (str, int), "", source)),
        str(_require(doc, "image_id", (str, int), "", source)),
        str(doc.get("text", "")),
        tgt,
        gt,
    )


def read_jsonl(path) -> list[dict]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise DataError(f"malformed JSON line: {exc.msg}", f"line {lineno}", str(path)) from None
    return out


def load_queries(path) -> list[QueryRecord]:
    records = []
    for i, doc in enumerate(read_jsonl(path)):
        try:
            records.append(parse_query(doc))
        except DataError as exc:
            raise DataError(exc.reason, f"line {i + 1}" + (f".{exc.field}" if exc.field else ""), str(path)) from None
    return records


def validate_queries(records: Sequence[QueryRecord],
                     scenes: Optional[Mapping[str, SceneGraph]] = None) -> None:
    """Check per-image query counts (1..10) and target references."""
    seen = set()
    for q in records:
        if q.query_id in seen:
            raise DataError(f"duplicate query id {q.query_id!r}")
        seen.add(q.query_id)
    per_image = Counter(q.image_id for q in records)
    for image_id, m in per_image.items():
        if m > MAX_QUERIES_PER_IMAGE:
            raise DataError(f"image {image_id!r} has {m} queries (max {MAX_QUERIES_PER_IMAGE})")
    if scenes is None:
        return
    for q in records:
        sg = scenes.get(q.image_id)
        if sg is None:
            raise DataError(f"query {q.query_id!r} names unknown image {q.image_id!r}")
        if q.target_object_id is not None and not 0 <= q.target_object_id < sg.n:
            raise DataError(f"query {q.query_id!r} targets object {q.target_object_id} "
                            f"but image {q.image_id!r} has {sg.n} objects")
        if q.gt_mask is not None and q.gt_mask.shape != (sg.height, sg.width):
            raise DataError(f"query {q.query_id!r} ground-truth mask has wrong dimensions")


def write_jsonl(path, docs: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for d in docs:
            fh.write(json.dumps(d, ensure_ascii=False, sort_keys=False) + "\n")


def scene_to_json(sg: SceneGraph) -> dict:
    return {
        "image_id": sg.image_id,
        "width": sg.width,
        "height": sg.height,
        "objects": [
            {"id": o.id, "label": o.label, "bbox": [_num(v) for v in o.bbox], "rle": list(o.mask.counts)}
            for o in sg.objects
        ],
        "relations": [{"sub": r.subject_id, "obj": r.object_id, "pred": r.predicate} for r in sg.relations],
    }


def dependency_to_json(dg: DependencyGraph) -> dict:
    return {"query_id": dg.query_id,
            "tokens": [{"text": t.text, "head": t.head, "rel": t.deprel} for t in dg.tokens]}


def _num(v: float):
    return int(v) if float(v).is_integer() else v
