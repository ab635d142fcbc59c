import copy
import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp
from numpy.testing import assert_array_equal

from dumoga.graphs import (
    DataError, DependencyGraph, Mask, QueryRecord, Token, load_dependency_graph, load_queries, load_scene_graph,
    mask_decode, mask_encode, parse_dependency_graph, parse_scene_graph, read_matrix, validate_dependency_graph,
    validate_queries, validate_scene_graph, write_jsonl, write_matrix,
)

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def scene_doc():
    return json.loads((FIXTURES / "scene_3obj.json").read_text())


@pytest.fixture
def dep_doc():
    return json.loads((FIXTURES / "dep_4tok.json").read_text())


# masks

def test_decode_all_foreground():
    assert_array_equal(mask_decode(Mask(2, 2, (0, 4))), np.ones((2, 2), bool))


def test_decode_all_background():
    assert_array_equal(mask_decode(Mask(2, 2, (4,))), np.zeros((2, 2), bool))


def test_decode_row_major():
    # runs: 1 background, 2 foreground, 1 background
    assert_array_equal(mask_decode(Mask(2, 2, (1, 2, 1))), [[0, 1], [1, 0]])


def test_encode_canonical():
    assert mask_encode(np.ones((2, 2), bool)).counts == (0, 4)
    assert mask_encode(np.zeros((2, 2), bool)).counts == (4,)
    assert mask_encode(np.array([[0, 1], [1, 0]], bool)).counts == (1, 2, 1)


def test_rle_sum_mismatch():
    with pytest.raises(DataError, match="RLE sum mismatch"):
        Mask(2, 2, (1, 2))


def test_negative_run():
    with pytest.raises(DataError, match="negative run length"):
        Mask(2, 2, (5, -1))


def test_encode_rejects_empty():
    with pytest.raises(DataError):
        mask_encode(np.zeros((0, 3), bool))
    with pytest.raises(DataError):
        mask_encode(np.zeros(4, bool))


@settings(max_examples=1000, deadline=None)
@given(hnp.arrays(bool, hnp.array_shapes(min_dims=2, max_dims=2, min_side=1, max_side=12)))
def test_mask_round_trip(bitmap):
    m = mask_encode(bitmap)
    assert_array_equal(mask_decode(m), bitmap)
    assert mask_encode(mask_decode(m)) == m
    assert m.area == int(bitmap.sum())


def test_mask_json_round_trip():
    m = Mask(3, 2, (1, 4, 1))
    doc = m.to_json()
    assert doc == {"h": 3, "w": 2, "rle": [1, 4, 1]}


# scene graphs

def test_parse_scene_fixture():
    sg = load_scene_graph(FIXTURES / "scene_3obj.json")
    assert sg.n == 3
    assert len(sg.relations) == 2
    assert [o.label for o in sg.objects] == ["person", "cup", "table"]
    assert sg.objects[1].mask.area == 1
    assert not sg.has_features


def test_dangling_relation(scene_doc):
    scene_doc["relations"][0]["sub"] = 7
    with pytest.raises(DataError, match="dangling relation id") as exc:
        parse_scene_graph(scene_doc)
    assert exc.value.field == "relations[0].sub"


def test_scene_rle_sum_mismatch(scene_doc):
    scene_doc["objects"][1]["rle"] = [2, 1, 12]
    with pytest.raises(DataError, match="RLE sum mismatch") as exc:
        parse_scene_graph(scene_doc)
    assert exc.value.field == "objects[1].rle"


def test_too_many_objects(scene_doc):
    with pytest.raises(DataError, match="too many objects"):
        parse_scene_graph(scene_doc, max_objects=2)


def test_duplicate_object_id(scene_doc):
    scene_doc["objects"][2]["id"] = 1
    with pytest.raises(DataError, match="duplicate object id"):
        parse_scene_graph(scene_doc)


def test_self_relation(scene_doc):
    scene_doc["relations"][0]["obj"] = 0
    with pytest.raises(DataError, match="self relation"):
        parse_scene_graph(scene_doc)


def test_bbox_out_of_bounds(scene_doc):
    scene_doc["objects"][0]["bbox"] = [3, 0, 2, 1]
    with pytest.raises(DataError, match="bbox"):
        parse_scene_graph(scene_doc)


def test_missing_field(scene_doc):
    del scene_doc["objects"][0]["label"]
    with pytest.raises(DataError, match="missing field 'label'"):
        parse_scene_graph(scene_doc)


def test_objects_sorted_by_id(scene_doc):
    shuffled = copy.deepcopy(scene_doc)
    shuffled["objects"].reverse()
    assert parse_scene_graph(shuffled) == parse_scene_graph(scene_doc)


def test_load_is_deterministic_and_revalidates():
    a = load_scene_graph(FIXTURES / "scene_3obj.json")
    b = load_scene_graph(FIXTURES / "scene_3obj.json")
    assert a == b
    assert validate_scene_graph(a) is a


def test_scene_features(tmp_path):
    feats = np.arange(3 * 5, dtype=np.float32).reshape(3, 5)
    write_matrix(tmp_path / "f.bin", feats)
    sg = load_scene_graph(FIXTURES / "scene_3obj.json", features=tmp_path / "f.bin", feature_dim=5)
    assert sg.has_features
    assert_array_equal(sg.feature_matrix(), feats)
    with pytest.raises(DataError):
        load_scene_graph(FIXTURES / "scene_3obj.json", features=tmp_path / "f.bin", feature_dim=4)


def test_scene_malformed_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(DataError, match="malformed"):
        load_scene_graph(p)


# dependency graphs

def test_parse_dependency_fixture():
    dg = load_dependency_graph(FIXTURES / "dep_4tok.json")
    assert dg.l == 4
    assert dg.root == 1
    assert dg.heads == [1, -1, 1, 2]


def _dep(heads, emb=None):
    return DependencyGraph("q", tuple(Token(i, f"w{i}", h, "dep") for i, h in enumerate(heads)), emb)


def test_two_cycle_has_no_root():
    with pytest.raises(DataError, match="no root"):
        validate_dependency_graph(_dep([1, 0]))


def test_multiple_roots():
    with pytest.raises(DataError, match="multiple roots"):
        validate_dependency_graph(_dep([-1, -1]))


def test_cycle_with_root():
    with pytest.raises(DataError, match="cycle"):
        validate_dependency_graph(_dep([-1, 2, 1]))


def test_self_loop():
    with pytest.raises(DataError, match="self-loop"):
        validate_dependency_graph(_dep([-1, 1]))


def test_embedding_row_mismatch():
    with pytest.raises(DataError, match="embedding row-count mismatch"):
        validate_dependency_graph(_dep([1, -1, 1, 2, 3], np.zeros((4, 768))))


def test_head_out_of_range(dep_doc):
    dep_doc["tokens"][3]["head"] = 9
    with pytest.raises(DataError, match="out of range"):
        parse_dependency_graph(dep_doc)


@settings(max_examples=200, deadline=None)
@given(st.data())
def test_random_trees_validate(data):
    # every token except the root points at an earlier node in a random order
    l = data.draw(st.integers(1, 12))  # noqa: E741
    order = data.draw(st.permutations(range(l)))
    heads = [0] * l
    heads[order[0]] = -1
    for k in range(1, l):
        heads[order[k]] = order[data.draw(st.integers(0, k - 1))]
    dg = validate_dependency_graph(_dep(heads))
    assert dg.root == order[0]


# feature files

def test_matrix_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    mat = rng.normal(size=(7, 3)).astype(np.float32)
    write_matrix(tmp_path / "m.bin", mat)
    raw = (tmp_path / "m.bin").read_bytes()
    assert raw[:4] == b"DGF1"
    assert int.from_bytes(raw[4:8], "little") == 7
    assert int.from_bytes(raw[8:12], "little") == 3
    assert len(raw) == 12 + 7 * 3 * 4
    assert_array_equal(read_matrix(tmp_path / "m.bin"), mat)


def test_matrix_bad_magic(tmp_path):
    (tmp_path / "m.bin").write_bytes(b"XXXX" + bytes(8))
    with pytest.raises(DataError, match="magic"):
        read_matrix(tmp_path / "m.bin")


def test_matrix_truncated(tmp_path):
    write_matrix(tmp_path / "m.bin", np.ones((2, 2)))
    (tmp_path / "m.bin").write_bytes((tmp_path / "m.bin").read_bytes()[:-1])
    with pytest.raises(DataError, match="payload"):
        read_matrix(tmp_path / "m.bin")


def test_matrix_non_finite(tmp_path):
    write_matrix(tmp_path / "m.bin", np.array([[1.0, np.nan]]))
    with pytest.raises(DataError, match="non-finite"):
        read_matrix(tmp_path / "m.bin")


# queries

def test_query_round_trip(tmp_path):
    recs = [QueryRecord("q1", "kitchen", "the cup", 1, Mask(4, 4, (2, 1, 13))),
            QueryRecord("q2", "kitchen", "the table", 2, None)]
    write_jsonl(tmp_path / "q.jsonl", [r.to_json() for r in recs])
    back = load_queries(tmp_path / "q.jsonl")
    assert back == recs


def test_validate_queries_against_scene():
    sg = load_scene_graph(FIXTURES / "scene_3obj.json")
    ok = [QueryRecord("q1", "kitchen", "x", 1)]
    validate_queries(ok, {"kitchen": sg})
    with pytest.raises(DataError, match="duplicate query id"):
        validate_queries(ok * 2)
    with pytest.raises(DataError, match="targets object"):
        validate_queries([QueryRecord("q1", "kitchen", "x", 5)], {"kitchen": sg})
    with pytest.raises(DataError, match="wrong dimensions"):
        validate_queries([QueryRecord("q1", "kitchen", "x", None, Mask(2, 2, (4,)))], {"kitchen": sg})
    many = [QueryRecord(f"q{i}", "kitchen", "x") for i in range(11)]
    with pytest.raises(DataError, match="queries"):
        validate_queries(many)


def test_malformed_jsonl_line(tmp_path):
    (tmp_path / "q.jsonl").write_text('{"query_id": "a", "image_id": "b", "text": "c"}\n{oops\n')
    with pytest.raises(DataError, match="line 2"):
        load_queries(tmp_path / "q.jsonl")
