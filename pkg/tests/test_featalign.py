import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from dumoga.featalign import (
    SCORE_EPS, ModelParams, cross_attention, fuse_and_score, load_params, predict, save_params, score_candidates,
    select, softmax_rows,
)
from dumoga.graphs import DataError
from dumoga.structal import align
from dumoga.synthetic import random_dependency_graph, random_scene_graph


def small_params(rng, dv=4, dt=3, h=5, scale=0.5):
    return ModelParams(rng.normal(size=(dv, dt)) * scale, rng.normal(size=(2 * dt, h)) * scale,
                       rng.normal(size=h) * 0.1, rng.normal(size=(h, 1)) * scale, np.array(0.1))


# attention

def test_attention_hand_example():
    out, w = cross_attention(np.array([[2.0]]), np.array([[0.0], [1.0]]), np.array([[1.0]]), return_weights=True)
    e2 = math.exp(2)
    assert_allclose(w, [[1 / (1 + e2), e2 / (1 + e2)]], rtol=1e-12)
    assert_allclose(out[0, 0], 0.8808, atol=1e-4)


def test_attention_uniform_when_query_zero():
    rng = np.random.default_rng(0)
    F_l = rng.normal(size=(4, 3))
    out = cross_attention(rng.normal(size=(5, 2)), F_l, np.zeros((2, 3)))
    assert_allclose(out, np.tile(F_l.mean(axis=0), (5, 1)), atol=1e-12)


def test_attention_single_word():
    rng = np.random.default_rng(1)
    F_l = rng.normal(size=(1, 3))
    out = cross_attention(rng.normal(size=(3, 4)), F_l, rng.normal(size=(4, 3)))
    assert_allclose(out, np.repeat(F_l, 3, axis=0), atol=1e-12)


def test_attention_dimension_mismatch():
    with pytest.raises(ValueError, match="dimension mismatch"):
        cross_attention(np.zeros((2, 4)), np.zeros((3, 3)), np.zeros((5, 3)))


def test_attention_non_finite():
    with pytest.raises(ValueError, match="non-finite"):
        cross_attention(np.array([[np.nan]]), np.zeros((1, 1)), np.ones((1, 1)))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**6), st.floats(-50, 50))
def test_softmax_rows_are_distributions(seed, shift):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(4, 6)) * 10
    p = softmax_rows(x)
    assert np.all(p >= 0)
    assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)
    assert_allclose(softmax_rows(x + shift), p, atol=1e-12)


# scoring

def test_zero_params_score_half():
    rng = np.random.default_rng(2)
    sv = score_candidates(rng.normal(size=(4, 6)), rng.normal(size=(3, 5)), rng.random((4, 3)),
                          ModelParams.zeros(6, 5, 7))
    assert_array_equal(sv.scores, 0.5)
    assert sv.selected == 0


def test_zero_params_selects_lowest_valid():
    rng = np.random.default_rng(2)
    sv = score_candidates(rng.normal(size=(4, 6)), rng.normal(size=(3, 5)), rng.random((4, 3)),
                          ModelParams.zeros(6, 5, 7), valid=np.array([False, False, True, True]))
    assert sv.selected == 2


def test_bias_only_score():
    p = ModelParams.zeros(2, 2, 3)
    p = ModelParams(p.Wq, p.W1, p.b1, p.W2, np.array(2.0))
    sv = score_candidates(np.ones((3, 2)), np.ones((2, 2)), np.ones((3, 2)), p)
    assert_allclose(sv.scores, 0.880797, atol=1e-6)


def test_select_argmax_and_validity():
    assert select(np.array([0.2, 0.9, 0.1]), np.ones(3, bool)) == 1
    assert select(np.array([0.2, 0.9, 0.1]), np.array([True, False, True])) == 0
    with pytest.raises(ValueError):
        select(np.array([0.5]), np.array([False]))


def test_scores_clamped():
    p = ModelParams.zeros(1, 1, 1)
    hi = fuse_and_score(np.zeros((1, 1)), np.zeros((1, 1)), np.zeros((1, 1)),
                        ModelParams(p.Wq, p.W1, p.b1, p.W2, np.array(100.0)))
    lo = fuse_and_score(np.zeros((1, 1)), np.zeros((1, 1)), np.zeros((1, 1)),
                        ModelParams(p.Wq, p.W1, p.b1, p.W2, np.array(-100.0)))
    assert hi.scores[0] == 1 - SCORE_EPS
    assert lo.scores[0] == SCORE_EPS


def test_constructed_params_select_marked_candidate():
    # the fused input's first column is R^a[:, 0]; route it through a single relu unit
    dt, n = 3, 4
    Ra = np.zeros((n, dt))
    Ra[2, 0] = 5.0
    W1 = np.zeros((2 * dt, 1))
    W1[0, 0] = 1.0
    params = ModelParams(np.zeros((2, dt)), W1, np.zeros(1), np.array([[10.0]]), np.array(-5.0))
    sv = fuse_and_score(Ra, np.zeros((n, 2)), np.zeros((2, dt)), params)
    assert sv.selected == 2
    assert sv.scores[2] > 0.99 and np.all(np.delete(sv.scores, 2) < 0.01)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6))
def test_permutation_equivariance(seed):
    rng = np.random.default_rng(seed)
    n, l = int(rng.integers(1, 8)), int(rng.integers(1, 6))  # noqa: E741
    params = small_params(rng)
    F_i, F_l, alpha = rng.normal(size=(n, 4)), rng.normal(size=(l, 3)), rng.random((n, l))
    perm = rng.permutation(n)
    a = score_candidates(F_i, F_l, alpha, params)
    b = score_candidates(F_i[perm], F_l, alpha[perm], params)
    assert_allclose(b.scores, a.scores[perm], atol=1e-12)
    if np.sum(a.scores == a.scores.max()) == 1:
        assert perm[b.selected] == a.selected


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6))
def test_scores_in_open_interval(seed):
    rng = np.random.default_rng(seed)
    sv = score_candidates(rng.normal(size=(5, 4)) * 100, rng.normal(size=(3, 3)) * 100, rng.random((5, 3)),
                          small_params(rng, scale=5.0))
    assert np.all(sv.scores > 0) and np.all(sv.scores < 1)


# parameters and checkpoints

def test_init_shapes_and_bounds():
    p = ModelParams.init(6, 4, 8, seed=3)
    assert (p.visual_dim, p.text_dim, p.hidden) == (6, 4, 8)
    assert p.Wq.shape == (6, 4) and p.W1.shape == (8, 8) and p.W2.shape == (8, 1) and p.b2.shape == ()
    assert np.all(np.abs(p.W1) <= math.sqrt(6 / 16))
    assert not p.b1.any() and p.b2 == 0
    q = ModelParams.init(6, 4, 8, seed=3)
    assert all(np.array_equal(x, y) for x, y in zip(p.tensors().values(), q.tensors().values()))


def test_params_shape_validation():
    p = ModelParams.zeros(2, 3, 4)
    with pytest.raises(ValueError):
        ModelParams(p.Wq, np.zeros((5, 4)), p.b1, p.W2, p.b2)
    with pytest.raises(ValueError):
        ModelParams(p.Wq, p.W1, p.b1, p.W2, np.array(np.inf))


def test_checkpoint_round_trip(tmp_path):
    p = ModelParams.init(5, 3, 4, seed=0)
    save_params(tmp_path / "p.ckpt", p)
    q = load_params(tmp_path / "p.ckpt")
    for name, arr in p.tensors().items():
        assert_array_equal(q.tensors()[name], arr.astype(np.float32).astype(np.float64))
    raw = (tmp_path / "p.ckpt").read_bytes()
    assert raw[:4] == b"DGP1"
    assert struct.unpack("<I", raw[4:8])[0] == 2 and raw[8:10] == b"Wq"


def test_checkpoint_errors(tmp_path):
    save_params(tmp_path / "p.ckpt", ModelParams.zeros(2, 2, 2))
    raw = (tmp_path / "p.ckpt").read_bytes()
    (tmp_path / "a").write_bytes(b"NOPE" + raw[4:])
    (tmp_path / "b").write_bytes(raw[:-3])
    (tmp_path / "c").write_bytes(raw + b"\0")
    with pytest.raises(DataError, match="magic"):
        load_params(tmp_path / "a")
    with pytest.raises(DataError, match="truncated"):
        load_params(tmp_path / "b")
    with pytest.raises(DataError, match="trailing"):
        load_params(tmp_path / "c")


# predict

def _scene_with_features(rng, n, l, dv=4, dt=3):
    sg = random_scene_graph(rng, n, feature_dim=dv)
    dep = random_dependency_graph(rng, l, text_dim=dt)
    return sg, dep


def test_predict_single_candidate():
    rng = np.random.default_rng(4)
    sg, dep = _scene_with_features(rng, 1, 3)
    pred = predict(sg, dep, align(sg, dep), small_params(rng))
    assert pred.selected == 0
    assert pred.mask == sg.objects[0].mask


def test_predict_tie_returns_first_mask():
    rng = np.random.default_rng(5)
    sg, dep = _scene_with_features(rng, 4, 3)
    pred = predict(sg, dep, align(sg, dep), ModelParams.zeros(4, 3, 2))
    assert pred.selected == 0
    assert pred.mask == sg.objects[0].mask


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_predict_returns_an_ingested_mask(seed):
    rng = np.random.default_rng(seed)
    sg, dep = _scene_with_features(rng, int(rng.integers(1, 8)), int(rng.integers(1, 6)))
    pred = predict(sg, dep, align(sg, dep), small_params(rng))
    assert pred.mask is sg.objects[pred.selected].mask


def test_predict_requires_features():
    rng = np.random.default_rng(6)
    sg, dep = random_scene_graph(rng, 3), random_dependency_graph(rng, 2, text_dim=3)
    with pytest.raises(DataError, match="features"):
        predict(sg, dep, align(sg, dep), small_params(rng))
