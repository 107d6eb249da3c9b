import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vdlab.models import PredictionTrack, postprocess, smoothing_window
from vdlab.models.cnn import (
    CnnConfig, CnnTrainParams, cnn_forward, cnn_loss_and_grads, cnn_predict_track, cnn_train, init_cnn,
    window_batch,
)
from vdlab.models.forest import ForestModel, ForestParams, Tree, forest_predict, forest_train, gini
from vdlab.models.rnn import (
    RnnConfig, RnnTrainParams, init_rnn, rnn_forward, rnn_loss_and_grads, rnn_predict_track, rnn_train,
)
from vdlab.models.serialize import ModelFormatError, load_model, save_model


def grad_check(model, loss_fn, eps=1e-5):
    """Worst per-tensor relative error ||a - n|| / (||a|| + ||n||) against central differences."""
    _, grads = loss_fn()
    worst = {}
    for k, v in model.params.items():
        num = np.zeros_like(v)
        for j in range(v.size):
            old = v.flat[j]
            v.flat[j] = old + eps
            lp = loss_fn()[0]
            v.flat[j] = old - eps
            lm = loss_fn()[0]
            v.flat[j] = old
            num.flat[j] = (lp - lm) / (2 * eps)
        a = grads[k]
        worst[k] = np.linalg.norm(a - num) / max(np.linalg.norm(a) + np.linalg.norm(num), 1e-12)
    return worst


def _randomize(model, scale, seed=0):
    rng = np.random.default_rng(seed)
    for k in model.params:
        model.params[k] = rng.standard_normal(model.params[k].shape) * scale


# ------------------------------------------------------------------ common

def test_smoothing_window():
    assert smoothing_window(800, 70) == 57
    assert smoothing_window(0, 70) == 1
    assert smoothing_window(100, 30) == 3
    assert smoothing_window(800, 62.82) == 51


def test_postprocess_removes_isolated_frame():
    p = np.zeros(100)
    p[50] = 0.9
    out = postprocess(PredictionTrack(70.0, p), 0.5, 800)
    assert not out.labels.any() and len(out) == 100
    raw = postprocess(PredictionTrack(70.0, p), 0.5, 0)
    assert raw.labels.sum() == 1


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=300), st.sampled_from([0, 50, 200, 800]))
def test_postprocess_reaches_root(probs, ms):
    # a median pass is not idempotent in general ([0,1,0,1,0] needs two passes);
    # repeated passes settle on a root, which then stays fixed
    track = postprocess(PredictionTrack(70.0, probs), 0.5, ms)
    assert len(track) == len(probs)
    for _ in range(len(probs)):
        nxt = postprocess(PredictionTrack(70.0, track.labels.astype(float)), 0.5, ms)
        if np.array_equal(nxt.labels, track.labels):
            break
        track = nxt
    again = postprocess(PredictionTrack(70.0, track.labels.astype(float)), 0.5, ms)
    assert np.array_equal(again.labels, track.labels)


def test_prediction_track_validation():
    with pytest.raises(ValueError):
        PredictionTrack(70.0, [0.2, 1.2])
    with pytest.raises(ValueError):
        PredictionTrack(70.0, [0.2, 0.4], [True])
    with pytest.raises(ValueError):
        postprocess(PredictionTrack(70.0, [0.2]), 1.0)


# ------------------------------------------------------------------ forest

def test_gini():
    assert gini([3, 3]) == 0.5
    assert gini([5, 0]) == 0.0


def _separable(n=200, seed=0):
    x = np.random.default_rng(seed).standard_normal((n, 2))
    return x, x[:, 0] > 0


def test_forest_separable_perfect():
    x, y = _separable()
    m = forest_train(x, y, ForestParams(n_trees=10, feature_subsample=2, seed=3))
    assert np.all((forest_predict(m, x) >= 0.5) == y)


def test_forest_deterministic_and_pointwise():
    x, y = _separable()
    p = ForestParams(n_trees=5, seed=11)
    a, b = forest_predict(forest_train(x, y, p), x), forest_predict(forest_train(x, y, p), x)
    assert np.array_equal(a, b)
    perm = np.random.default_rng(0).permutation(len(x))
    np.testing.assert_array_equal(forest_predict(forest_train(x, y, p), x[perm]), a[perm])


def test_forest_jobs_independent():
    x, y = _separable(300)
    p = ForestParams(n_trees=6, seed=5)
    assert np.array_equal(forest_predict(forest_train(x, y, p, jobs=1), x),
                          forest_predict(forest_train(x, y, p, jobs=3), x))


def _stub(values):
    # single-leaf trees
    return ForestModel([Tree(np.array([-1]), np.zeros(1), np.array([-1]), np.array([-1]), np.array([v]))
                        for v in values], 2)


def test_forest_vote_mean():
    x = np.zeros((3, 2))
    assert np.all(forest_predict(_stub([1.0] * 10), x) == 1.0)
    assert np.allclose(forest_predict(_stub([1.0] * 7 + [0.0] * 3), x), 0.7)


def test_forest_accuracy_monotone_in_depth():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((400, 6))
    y = (np.sin(2 * x[:, 0]) + x[:, 1] * x[:, 2] + 0.3 * rng.standard_normal(400)) > 0
    accs = []
    for depth in range(0, 12):
        m = forest_train(x, y, ForestParams(n_trees=5, max_depth=depth, seed=2))
        accs.append(np.mean((forest_predict(m, x) >= 0.5) == y))
    assert all(b >= a for a, b in zip(accs, accs[1:])), accs


def test_forest_tree_is_prefix_of_deeper_tree():
    x, y = _separable(300, 1)
    y = y ^ (x[:, 1] > 0.8)
    shallow = forest_train(x, y, ForestParams(n_trees=1, max_depth=2, seed=9)).trees[0]
    deep = forest_train(x, y, ForestParams(n_trees=1, max_depth=6, seed=9)).trees[0]
    assert shallow.depth() <= 2
    assert np.all((deep.value >= 0) & (deep.value <= 1))
    # the deep tree's nodes above depth 2 make the same splits
    def splits(t, node=0, d=0, limit=2):
        if t.feature[node] == -1 or d == limit:
            return []
        return [(d, t.feature[node], t.threshold[node])] + splits(t, t.left[node], d + 1, limit) + \
            splits(t, t.right[node], d + 1, limit)
    assert splits(shallow) == splits(deep)


def test_forest_errors():
    x, y = _separable()
    with pytest.raises(ValueError):
        forest_train(x, np.ones(len(x), bool))
    with pytest.raises(ValueError):
        forest_train(np.zeros((0, 2)), np.zeros(0, bool))
    with pytest.raises(ValueError):
        forest_predict(forest_train(x, y, ForestParams(n_trees=1)), np.zeros((2, 3)))


# ------------------------------------------------------------------ CNN

def test_cnn_shape_chain():
    assert CnnConfig(80).shapes() == [(80, 115), (78, 113), (76, 111), (25, 37), (23, 35), (21, 33), (7, 11)]
    with pytest.raises(ValueError):
        CnnConfig(8, 8)


def test_cnn_zero_weights_half():
    m = init_cnn(CnnConfig(26, 40, (2, 2, 3, 3), dense=4))
    for v in m.params.values():
        v[...] = 0
    assert cnn_forward(m, np.random.default_rng(0).standard_normal((26, 40))) == 0.5


def test_cnn_gradient_check_toy():
    m = init_cnn(CnnConfig(8, 9, (2, 3), (1,), 3, 4), 1)
    _randomize(m, 0.5)
    rng = np.random.default_rng(1)
    x, y = rng.standard_normal((3, 8, 9)), np.array([1.0, 0.0, 1.0])
    errs = grad_check(m, lambda: cnn_loss_and_grads(m, x, y))
    assert max(errs.values()) < 1e-4, errs


def test_cnn_gradient_check_two_pools():
    # conv, conv, pool, conv, pool: exercises every layer type twice
    m = init_cnn(CnnConfig(14, 14, (2, 2, 2), (1, 2), 2, 3), 2)
    _randomize(m, 0.4, 2)
    rng = np.random.default_rng(2)
    x, y = rng.standard_normal((2, 14, 14)), np.array([0.0, 1.0])
    errs = grad_check(m, lambda: cnn_loss_and_grads(m, x, y))
    assert set(errs) >= {"conv0.w", "conv2.b", "dense.w", "out.b"}
    assert max(errs.values()) < 1e-4, errs


def test_cnn_track_prediction_matches_windows():
    cfg = CnnConfig(26, 41, (3, 3, 4, 4), (1, 3), 3, 5)
    m = init_cnn(cfg, 3)
    _randomize(m, 0.3, 3)
    track = np.random.default_rng(3).standard_normal((26, 90))
    ref = cnn_forward(m, window_batch([track], [(0, c) for c in range(90)], 41))
    np.testing.assert_allclose(cnn_predict_track(m, track), ref, rtol=0, atol=1e-12)


def test_cnn_learns_toy_task():
    # vocal frames carry a high-band tone
    rng = np.random.default_rng(0)
    tracks, labels = [], []
    for _ in range(3):
        lab = np.repeat(rng.random(12) > 0.5, 20)
        m = rng.standard_normal((12, len(lab))) * 0.3
        m[8] += 2.0 * lab
        tracks.append(m)
        labels.append(lab)
    cfg = CnnConfig(12, 11, (4, 4), (1,), 3, 8)
    model = cnn_train(tracks, labels, cfg, CnnTrainParams(epochs=4, batch=16, lr=0.02, seed=1))
    acc = np.mean([(cnn_predict_track(model, t) >= 0.5) == lab for t, lab in zip(tracks, labels)])
    assert acc > 0.9
    again = cnn_train(tracks, labels, cfg, CnnTrainParams(epochs=4, batch=16, lr=0.02, seed=1))
    for k in model.params:
        assert np.array_equal(model.params[k], again.params[k])


def test_cnn_errors():
    m = init_cnn(CnnConfig(12, 11, (2, 2), (1,), 3, 4))
    with pytest.raises(ValueError):
        cnn_forward(m, np.zeros((12, 12)))
    m.params["out.b"][0] = np.nan
    tracks, labels = [np.zeros((12, 40))], [np.arange(40) % 2 == 0]
    with pytest.raises(FloatingPointError, match="iteration 0"):
        cnn_train(tracks, labels, m.config, CnnTrainParams(epochs=1), init=m)


# ------------------------------------------------------------------ RNN

def test_rnn_zero_weights_half():
    m = init_rnn(RnnConfig(4, (3, 2), 10))
    for v in m.params.values():
        v[...] = 0
    assert np.all(rnn_forward(m, np.random.default_rng(0).standard_normal((2, 10, 4))) == 0.5)


def test_rnn_gradient_check_toy():
    m = init_rnn(RnnConfig(3, (4,), 6), 1)
    _randomize(m, 0.5)
    rng = np.random.default_rng(5)
    x, y = rng.standard_normal((2, 6, 3)), (rng.random((2, 6)) > 0.5).astype(float)
    errs = grad_check(m, lambda: rnn_loss_and_grads(m, x, y))
    assert max(errs.values()) < 1e-4, errs


def test_rnn_gradient_check_stacked_masked():
    m = init_rnn(RnnConfig(3, (4, 3), 6), 2)
    _randomize(m, 0.5, 1)
    rng = np.random.default_rng(6)
    x, y = rng.standard_normal((2, 6, 3)), (rng.random((2, 6)) > 0.5).astype(float)
    mask = np.ones((2, 6))
    mask[1, 4:] = 0
    errs = grad_check(m, lambda: rnn_loss_and_grads(m, x, y, mask))
    assert max(errs.values()) < 1e-4, errs


def _swap_directions(model):
    """Exchange forward/backward weights; later layers see their input halves swapped."""
    p = {k: v.copy() for k, v in model.params.items()}
    hidden = model.config.hidden
    for layer, h in enumerate(hidden):
        swapped = {}
        for d, other in (("f", "b"), ("b", "f")):
            for part in ("W", "U", "b"):
                swapped[f"l{layer}{d}.{part}"] = model.params[f"l{layer}{other}.{part}"].copy()
        if layer > 0:
            hp = hidden[layer - 1]
            for d in ("f", "b"):
                w = swapped[f"l{layer}{d}.W"]
                swapped[f"l{layer}{d}.W"] = np.concatenate([w[hp:], w[:hp]])
        p.update(swapped)
    hl = hidden[-1]
    p["out.w"] = np.concatenate([model.params["out.w"][hl:], model.params["out.w"][:hl]])
    return type(model)(model.config, p)


def test_rnn_bidirectional_symmetry():
    m = init_rnn(RnnConfig(3, (4, 3), 7), 4)
    _randomize(m, 0.5, 4)
    x = np.random.default_rng(7).standard_normal((2, 7, 3))
    a = rnn_forward(m, x)
    b = rnn_forward(_swap_directions(m), x[:, ::-1])
    np.testing.assert_allclose(b[:, ::-1], a, atol=1e-12)


def test_rnn_padding_is_inert():
    m = init_rnn(RnnConfig(3, (4, 3), 10), 4)
    _randomize(m, 0.5, 4)
    x = np.random.default_rng(8).standard_normal((1, 10, 3))
    short = rnn_forward(m, x[:, :6])
    padded = x.copy()
    padded[:, 6:] = 0
    mask = np.zeros((1, 10))
    mask[:, :6] = 1
    np.testing.assert_allclose(rnn_forward(m, padded, mask)[:, :6], short, atol=1e-12)


def test_rnn_learns_toy_task():
    rng = np.random.default_rng(1)
    tracks, labels = [], []
    for _ in range(4):
        lab = np.repeat(rng.random(10) > 0.5, 12)
        x = rng.standard_normal((len(lab), 4)) * 0.3
        x[:, 2] += 1.5 * lab
        tracks.append(x)
        labels.append(lab)
    cfg = RnnConfig(4, (5, 4), 30)
    model = rnn_train(tracks, labels, cfg, RnnTrainParams(epochs=25, batch=4, lr=0.1, train_hop=10, seed=0))
    acc = np.mean([(rnn_predict_track(model, t, hop=10) >= 0.5) == lab for t, lab in zip(tracks, labels)])
    assert acc > 0.9


def test_rnn_errors():
    m = init_rnn(RnnConfig(3, (2,), 5))
    with pytest.raises(ValueError):
        rnn_forward(m, np.zeros((1, 5, 4)))
    with pytest.raises(ValueError):
        rnn_forward(m, np.zeros((1, 5, 3)), np.ones((1, 4)))


def test_gradient_suite_runtime():
    t0 = time.perf_counter()
    test_cnn_gradient_check_toy()
    test_rnn_gradient_check_stacked_masked()
    assert time.perf_counter() - t0 < 60


# ------------------------------------------------------------------ serialization

def test_round_trips(tmp_path):
    x, y = _separable()
    models = [forest_train(x, y, ForestParams(n_trees=3)), init_cnn(CnnConfig(12, 11, (2, 2), (1,), 3, 4)),
              init_rnn(RnnConfig(3, (2, 2), 5))]
    inputs = [x, np.random.default_rng(0).standard_normal((2, 12, 11)), np.ones((1, 5, 3))]
    preds = [forest_predict, cnn_forward, rnn_forward]
    for model, inp, pred in zip(models, inputs, preds):
        path = tmp_path / "m.bin"
        save_model(path, model, extra={"note": 1}, extra_blobs={"mean": np.arange(3.0)})
        loaded, extra, blobs = load_model(path)
        assert extra == {"note": 1} and np.array_equal(blobs["mean"], np.arange(3.0))
        assert np.array_equal(pred(loaded, inp), pred(model, inp))
        first = path.read_bytes()
        save_model(path, loaded, extra={"note": 1}, extra_blobs={"mean": np.arange(3.0)})
        assert path.read_bytes() == first


def test_container_errors(tmp_path):
    p = tmp_path / "bad.bin"
    p.write_bytes(b"NOPE")
    with pytest.raises(ModelFormatError):
        load_model(p)
    save_model(p, init_rnn(RnnConfig(3, (2,), 5)))
    p.write_bytes(p.read_bytes()[:-3])
    with pytest.raises(ModelFormatError):
        load_model(p)
