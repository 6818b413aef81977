"""Tests for layers, heads, losses, optimizer and estimators."""
import warnings

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import ConvergenceWarning

from gyronn import grassmann as gr
from gyronn import linalg, spd
from gyronn.autodiff import Tensor, grad, gradcheck
from gyronn.data import synth_sbm_graph, synth_spd_classes, train_test_split_stratified
from gyronn.exceptions import ConfigError, ConvergenceError, CutLocusError
from gyronn.nn import (Adam, GcnEmbed, GcnHead, GcnLayer, GrassmannGCNClassifier,
                       GyroSpdClassifier, GyroSpsdClassifier, SpdConv, SpdFC, SpdMLR, SpsdMLR,
                       adam_step, cross_entropy, normalized_adjacency, softmax)
from gyronn.spsd import SpsdConfig

from conftest import rand_spd


# SPD layers

@pytest.mark.parametrize("metric", ["ai", "le", "lc"])
def test_fc_zero_params_give_identity(rng, metric):
    layer = SpdFC(metric, n=4, m=3)
    params = {"P": np.zeros((6, 1, 4, 4)), "W": np.zeros((6, 4, 4))}
    X = rand_spd(rng, 4, size=5)
    out = layer.forward(params, X)
    np.testing.assert_allclose(out, np.broadcast_to(np.eye(3), (5, 3, 3)), atol=1e-12)


def test_conv_output_shape_and_spd(rng):
    layer = SpdConv("ai", n=3, m=4, window=2, stride=1)
    params = layer.init_params(rng)
    seq = rand_spd(rng, 3, size=(2, 5))
    out = layer.forward(params, seq)
    assert out.shape == (2, 4, 4, 4)
    assert np.linalg.eigvalsh(out).min() > 0


def test_conv_diag_offsets_realized(rng):
    off = np.array([1.5, -0.5, 0.25])
    layer = SpdConv("ai", n=3, m=3, init_std=0.0, diag_offsets=off)
    params = layer.init_params(rng)
    out = layer.forward(params, np.eye(3)[None, None])
    np.testing.assert_allclose(np.diag(linalg.spd_fn(out[0, 0], "log")), off, atol=1e-10)


def test_conv_window_too_long(rng):
    layer = SpdConv("le", n=2, m=2, window=4)
    with pytest.raises(ValueError):
        layer.forward(layer.init_params(rng), rand_spd(rng, 2, size=(1, 3)))


def test_conv_gradcheck(rng):
    layer = SpdConv("ai", n=2, m=2, window=2)
    params = layer.init_params(rng)
    seq = rand_spd(rng, 2, size=(1, 3))

    def f(v):
        out = layer.forward({"P": v[0], "W": v[1]}, seq)
        from gyronn.autodiff import functions as F
        return F.sum(F.mul(out, out))

    assert gradcheck(f, [params["P"], params["W"]]) < 1e-3


# SPD MLR head

def test_mlr_identical_classes_equal_logits(rng):
    head = SpdMLR("le", n=3, n_classes=2)
    params = head.init_params(rng)
    params["P"][1] = params["P"][0]
    params["A"][1] = params["A"][0]
    logits = head.forward(params, rand_spd(rng, 3, size=7))
    np.testing.assert_allclose(logits[:, 0], logits[:, 1], atol=1e-12)


@pytest.mark.parametrize("metric", ["ai", "le", "lc"])
def test_mlr_flipped_normal_flips_logit(rng, metric):
    head = SpdMLR(metric, n=3, n_classes=3)
    params = head.init_params(rng)
    params["P"] = rng.normal(scale=0.3, size=params["P"].shape)
    X = rand_spd(rng, 3, size=6)
    before = head.forward(params, X)
    params["A"][1] = -params["A"][1]
    after = head.forward(params, X)
    np.testing.assert_allclose(after[:, 1], -before[:, 1], atol=1e-12)
    np.testing.assert_allclose(after[:, [0, 2]], before[:, [0, 2]], atol=1e-12)


def test_mlr_logits_match_hyperplane_numerators(rng):
    head = SpdMLR("ai", n=3, n_classes=2)
    params = head.init_params(rng)
    params["P"] = rng.normal(scale=0.3, size=params["P"].shape)
    X = rand_spd(rng, 3, size=4)
    logits = head.forward(params, X)
    expect = [spd.spd_mlr_logits("ai", x, head.hyperplanes(params)) for x in X]
    np.testing.assert_allclose(logits, expect, atol=1e-10)


def test_mlr_degenerate_normal_rejected(rng):
    head = SpdMLR("le", n=2, n_classes=2)
    params = head.init_params(rng)
    params["A"][0] = 0.0
    with pytest.raises(ConfigError):
        head.check_params(params)
    with pytest.raises(ConfigError):
        SpdMLR("le", n=2, n_classes=1)


def test_mlr_separable_reaches_full_train_accuracy(rng):
    n, N = 3, 60
    y = np.arange(N) % 2
    S = 0.1 * rng.normal(size=(N, n, n))
    S = (S + np.swapaxes(S, 1, 2)) / 2
    S[:, 0, 0] += np.where(y == 1, 1.0, -1.0)
    X = linalg.mat_exp(S)
    head = SpdMLR("le", n=n, n_classes=2)
    params = head.init_params(np.random.default_rng(0))
    opt = Adam(params, lr=1e-2)
    for _ in range(200):
        leaves = {k: Tensor(v) for k, v in params.items()}
        loss = cross_entropy(head.forward(leaves, X), y)
        g = grad(loss, list(leaves.values()))
        opt.step(dict(zip(leaves, g)))
    acc = np.mean(np.argmax(head.forward(params, X), axis=1) == y)
    assert acc == 1.0


# SPSD head

def _rank_structured(rng, N, n, p):
    U = gr.random_onb(rng, n, p, size=N)
    U = np.einsum("ij,njk->nik", np.eye(n), U)
    U[:, :p] += 2.0 * np.eye(p)
    U = np.linalg.qr(U)[0]
    S = rand_spd(rng, p, size=N)
    X = U @ S @ np.swapaxes(U, 1, 2)
    return X + 1e-3 * np.eye(n)


def test_spsd_head_identical_classes_equal_logits(rng):
    head = SpsdMLR(SpsdConfig(), n=4, p=2, n_classes=2)
    params = head.init_params(rng)
    for k in params:
        params[k][1] = params[k][0]
    logits = head.forward(params, _rank_structured(rng, 5, 4, 2))
    np.testing.assert_allclose(logits[:, 0], logits[:, 1], atol=1e-12)


def test_spsd_head_flipped_normal_flips_logit(rng):
    head = SpsdMLR(SpsdConfig(), n=4, p=2, n_classes=2)
    params = head.init_params(rng)
    params["B_P"] = rng.normal(scale=0.2, size=params["B_P"].shape)
    X = _rank_structured(rng, 5, 4, 2)
    before = head.forward(params, X)
    params["C_W"][0] *= -1
    params["A_W"][0] *= -1
    after = head.forward(params, X)
    np.testing.assert_allclose(after[:, 0], -before[:, 0], atol=1e-12)
    np.testing.assert_allclose(after[:, 1], before[:, 1], atol=1e-12)


def test_spsd_head_eval_leaves_state(rng):
    head = SpsdMLR(SpsdConfig(), n=4, p=2, n_classes=2)
    params = head.init_params(rng)
    X = _rank_structured(rng, 6, 4, 2)
    U0 = head.state.U.copy()
    head.forward(params, X, training=False)
    np.testing.assert_array_equal(head.state.U, U0)
    head.forward(params, X, training=True)
    assert np.abs(head.state.U - U0).max() > 0


# Grassmann GCN layers

def test_normalized_adjacency_weights():
    nb = [[0, 1, 2, 3], [0], [0], [0]]
    K = normalized_adjacency(nb)
    assert K[0, 1] == pytest.approx(0.5)
    assert K[0, 0] == pytest.approx(0.25)
    assert K[1, 2] == 0.0
    with pytest.raises(ValueError):
        normalized_adjacency([[0], []])


@pytest.mark.parametrize("perspective", ["projector", "onb"])
def test_gcn_single_node_is_nonlinearity(rng, perspective):
    n, p = 5, 2
    layer = GcnLayer(n, p, perspective)
    params = {"M": np.zeros((p, n - p)), "B": np.zeros((p, n - p))}
    U = gr.skew_param_onb(0.3 * rng.normal(size=(1, p, n - p)))
    X = U if perspective == "onb" else gr.tau(U)
    K = normalized_adjacency([[0]])
    out = layer.forward(params, X, K)
    if perspective == "onb":
        np.testing.assert_allclose(gr.tau(out), gr.tau(gr.gr_nonlinearity_onb(U)), atol=1e-12)
    else:
        np.testing.assert_allclose(out, gr.gr_nonlinearity(X), atol=1e-12)


def test_gcn_onb_layer_matches_projector_layer(rng):
    n, p, N = 6, 2, 5
    edges = [(0, 1), (1, 2), (2, 3), (3, 4), (0, 4), (1, 3)]
    nb = [{i} for i in range(N)]
    for i, j in edges:
        nb[i].add(j)
        nb[j].add(i)
    K = normalized_adjacency([sorted(s) for s in nb])
    U = gr.skew_param_onb(0.3 * rng.normal(size=(N, p, n - p)))
    params = {"M": 0.2 * rng.normal(size=(p, n - p)), "B": 0.2 * rng.normal(size=(p, n - p))}
    out_p = GcnLayer(n, p, "projector").forward(params, gr.tau(U), K)
    out_o = GcnLayer(n, p, "onb").forward(params, U, K)
    np.testing.assert_allclose(gr.tau(out_o), out_p, atol=1e-6)


def test_gcn_layer_cut_locus_names_node():
    n, p = 2, 1
    U = np.array([[[1.0], [0.0]], [[0.0], [1.0]]])
    K = normalized_adjacency([[0], [1]])
    layer = GcnLayer(n, p, "onb")
    with pytest.raises(CutLocusError) as info:
        layer.forward({"M": np.zeros((1, 1)), "B": np.zeros((1, 1))}, U, K)
    assert info.value.node == 1


def test_gcn_embed_zero_features_identity():
    embed = GcnEmbed(3, 5, 2)
    params = {"W": np.zeros((3, 6)), "b": np.zeros(6)}
    out = embed.forward(params, np.zeros((4, 3)))
    np.testing.assert_allclose(out, np.broadcast_to(gr.identity_projector(5, 2), (4, 5, 5)),
                               atol=1e-14)


def test_gcn_embed_plane_rotation():
    embed = GcnEmbed(1, 2, 1, "onb")
    params = {"W": np.array([[0.7]]), "b": np.zeros(1)}
    x = np.array([[0.5], [-1.0]])
    out = embed.forward(params, x)
    theta = 0.7 * x[:, 0]
    expect = np.stack([np.cos(theta), -np.sin(theta)], axis=1)[:, :, None]
    np.testing.assert_allclose(out, expect, atol=1e-12)


def test_gcn_head_identity_gives_bias(rng):
    head = GcnHead(5, 2, 3)
    params = head.init_params(rng)
    params["b"] = np.array([0.5, -1.0, 2.0])
    X = np.broadcast_to(gr.identity_projector(5, 2), (4, 5, 5))
    np.testing.assert_allclose(head.forward(params, X), np.tile(params["b"], (4, 1)), atol=1e-12)


def test_gcn_head_affine_in_tangent(rng):
    n, p = 4, 2
    head = GcnHead(n, p, 2, "onb")
    params = head.init_params(rng)
    B = 0.3 * rng.normal(size=(3, p, n - p))
    out = head.forward(params, gr.skew_param_onb(B))
    expect = (-B).reshape(3, -1) @ params["W"] + params["b"]
    np.testing.assert_allclose(out, expect, atol=1e-10)


# losses and optimizer

def test_cross_entropy_uniform_is_log_c():
    for C in (2, 3, 7):
        assert float(cross_entropy(np.zeros((4, C)), np.arange(4) % C)) == pytest.approx(np.log(C))


def test_cross_entropy_confident_correct_vanishes():
    logits = np.array([[1e3, 0.0, 0.0]])
    assert float(cross_entropy(logits, [0])) == pytest.approx(0.0, abs=1e-12)
    assert np.isfinite(float(cross_entropy(logits, [1])))


def test_cross_entropy_bad_label():
    with pytest.raises(ValueError):
        cross_entropy(np.zeros((2, 3)), [0, 3])
    with pytest.raises(ValueError):
        cross_entropy(np.zeros((2, 3)), [0, -1])


def test_softmax_rows_sum_to_one(rng):
    p = softmax(rng.normal(size=(5, 4)) * 50)
    np.testing.assert_allclose(p.sum(axis=1), 1.0)


def test_adam_quadratic_bowl():
    target = np.array([1.0, -2.0, 0.5])
    params = {"x": np.zeros(3)}
    state = None
    for _ in range(5000):
        state = adam_step(params, {"x": 2.0 * (params["x"] - target)}, state, lr=1e-2)
    assert np.abs(params["x"] - target).max() < 1e-6


def test_adam_rejects_bad_lr():
    with pytest.raises(ValueError):
        Adam({"x": np.zeros(1)}, lr=0.0)


# estimators

@pytest.fixture(scope="module")
def spd_data():
    X, y = synth_spd_classes(3, 20, 4, 0.1, seed=1)
    return X, y


def _non_monotone_steps(history, split="train"):
    loss = [h["loss"] for h in history if h["split"] == split]
    return int(np.sum(np.diff(loss) > 0))


def test_spd_classifier_api(spd_data):
    X, y = spd_data
    est = GyroSpdClassifier(m=3, epochs=3, seed=0)
    assert clone(est).get_params() == est.get_params()
    est.fit(X, y)
    proba = est.predict_proba(X)
    assert proba.shape == (60, 3)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0)
    assert set(est.predict(X)) <= set(est.classes_)
    assert 0.0 <= est.score(X, y) <= 1.0
    assert [h["epoch"] for h in est.history_ if h["split"] == "train"] == [0, 1, 2, 3]


def test_spd_classifier_deterministic(spd_data):
    X, y = spd_data
    a = GyroSpdClassifier(m=3, epochs=2, seed=4).fit(X, y).decision_function(X)
    b = GyroSpdClassifier(m=3, epochs=2, seed=4).fit(X, y).decision_function(X)
    np.testing.assert_array_equal(a, b)


def test_spd_classifier_loss_monotone_first_epochs(spd_data):
    X, y = spd_data
    est = GyroSpdClassifier(m=3, epochs=10, lr=1e-3, seed=0).fit(X, y)
    assert _non_monotone_steps(est.history_) <= 2


def test_spd_classifier_restore(spd_data):
    X, y = spd_data
    est = GyroSpdClassifier(m=3, epochs=2, seed=0).fit(X, y)
    other = GyroSpdClassifier(m=3).restore(est.checkpoint_params(), est.classes_, n=4)
    np.testing.assert_array_equal(other.decision_function(X), est.decision_function(X))


def test_spsd_classifier_restore_and_state(spd_data):
    X, y = spd_data
    est = GyroSpsdClassifier(m=4, p=2, epochs=2, seed=0).fit(X, y)
    U = est.state_.U.copy()
    est.predict(X)
    np.testing.assert_array_equal(est.state_.U, U)
    other = GyroSpsdClassifier(m=4, p=2).restore(est.checkpoint_params(), est.classes_, n=4)
    np.testing.assert_array_equal(other.decision_function(X), est.decision_function(X))
    assert est.n_epochs_ == 2 and est.stop_reason_ is None


def test_spsd_classifier_stops_at_domain_exit(spd_data, monkeypatch):
    import gyronn.nn.layers as layers
    X, y = spd_data
    ref = GyroSpsdClassifier(m=4, p=2, epochs=2, seed=0).fit(X, y)
    real, calls = layers.gr_mean, [0]

    def failing(*a, **k):
        calls[0] += 1
        if calls[0] == 5:  # first batch of epoch 3 (two batches per epoch)
            raise ConvergenceError("forced", residual=1.0)
        return real(*a, **k)

    monkeypatch.setattr(layers, "gr_mean", failing)
    est = GyroSpsdClassifier(m=4, p=2, epochs=5, seed=0)
    with pytest.warns(ConvergenceWarning):
        est.fit(X, y)
    assert est.n_epochs_ == 2 and "epoch 3" in est.stop_reason_
    np.testing.assert_array_equal(est.state_.U, ref.state_.U)
    np.testing.assert_array_equal(est.decision_function(X), ref.decision_function(X))


def test_spsd_classifier_bad_rank():
    X, y = synth_spd_classes(2, 4, 3, 0.1, seed=0)
    with pytest.raises(ConfigError):
        GyroSpsdClassifier(m=3, p=3, epochs=1).fit(X, y)


def test_spd_classifier_rejects_single_class():
    X, _ = synth_spd_classes(1, 5, 3, 0.1, seed=0)
    with pytest.raises(ConfigError):
        GyroSpdClassifier(epochs=1).fit(X, np.zeros(5))


@pytest.fixture(scope="module")
def small_graph():
    return synth_sbm_graph(30, 3, 0.4, 0.02, seed=3)


@pytest.mark.parametrize("perspective", ["projector", "onb"])
def test_gcn_classifier_api(small_graph, perspective):
    est = GrassmannGCNClassifier(perspective, n=4, p=2, epochs=5, seed=0)
    est.fit(small_graph)
    pred = est.predict(small_graph)
    assert pred.shape == (30,)
    assert 0.0 <= est.score(small_graph) <= 1.0
    other = GrassmannGCNClassifier(perspective, n=4, p=2).restore(
        est.checkpoint_params(), est.classes_, d=small_graph.features.shape[1])
    np.testing.assert_array_equal(other.predict(small_graph), pred)


def test_gcn_classifier_loss_monotone_first_epochs(small_graph):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        est = GrassmannGCNClassifier(n=4, p=2, epochs=10, lr=1e-3, seed=0).fit(small_graph)
    assert _non_monotone_steps(est.history_) <= 2


def test_gcn_perspectives_agree_at_init(small_graph):
    a = GrassmannGCNClassifier("projector", n=4, p=2, epochs=0, seed=1).fit(small_graph)
    b = GrassmannGCNClassifier("onb", n=4, p=2, epochs=0, seed=1).fit(small_graph)
    np.testing.assert_allclose(a.decision_function(small_graph),
                               b.decision_function(small_graph), atol=1e-6)
