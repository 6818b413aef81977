"""Tests for embeddings, windowed covariances, synthetic data and file formats."""
import numpy as np
import pytest

from gyronn import linalg
from gyronn.data import (Graph, beta_embed, gaussian_embed, load_graph, load_sequences,
                         lower_flatten, lower_unflatten, neighbor_features, pyramid_windows,
                         synth_sbm_graph, synth_spd_classes, train_test_split_stratified,
                         windowed_spd, write_graph, write_sequences)
from gyronn.exceptions import DomainError, ParseError

from conftest import rand_spd


# Gaussian embeddings

def test_gaussian_embed_examples(rng):
    np.testing.assert_array_equal(gaussian_embed(np.zeros(3), np.eye(3)), np.eye(4))
    np.testing.assert_array_equal(gaussian_embed([2.0], [[1.0]]), [[5.0, 2.0], [2.0, 1.0]])
    mu, S = rng.normal(size=3), rand_spd(rng, 3)
    Y = gaussian_embed(mu, S)
    assert np.linalg.det(Y) == pytest.approx(np.linalg.det(S))
    assert np.linalg.eigvalsh(Y).min() > 0


def test_gaussian_embed_rejects_non_spd():
    with pytest.raises(DomainError):
        gaussian_embed(np.zeros(2), np.diag([1.0, -1.0]))


@pytest.mark.parametrize("k", [1, 2, 4])
def test_beta_embed(rng, k):
    np.testing.assert_allclose(beta_embed(np.zeros(3), np.eye(3), k), np.eye(3 + k))
    Y = beta_embed(np.zeros(3), np.diag([0.5, 2.0, 3.0]), k)
    assert np.linalg.det(Y) == pytest.approx(1.0)
    mu, S = rng.normal(size=3), rand_spd(rng, 3)
    Y = beta_embed(mu, S, k)
    np.testing.assert_array_equal(Y, Y.T)
    assert np.linalg.det(Y) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        beta_embed(mu, S, 0)


def test_beta_embed_k1_matches_gaussian(rng):
    mu, S = rng.normal(size=2), rand_spd(rng, 2)
    scale = np.linalg.det(S) ** (-1.0 / 3.0)
    np.testing.assert_allclose(beta_embed(mu, S, 1), scale * gaussian_embed(mu, S))


# windowed covariances

def test_lower_flatten_roundtrip(rng):
    A = rng.normal(size=(4, 4))
    A = A + A.T
    v = lower_flatten(A)
    assert v.shape == (10,)
    np.testing.assert_array_equal(v[:4], A[:, 0])
    np.testing.assert_array_equal(lower_unflatten(v, 4), A)


def test_windowed_constant_frames_give_eps():
    series = np.tile(np.array([[0.0, 1.0], [2.0, 0.5], [1.0, -1.0]]), (6, 1, 1))
    Z = windowed_spd(series, 3, eps=1e-3)
    assert Z.shape == (4, 6, 6)
    np.testing.assert_allclose(Z, np.broadcast_to(1e-3 * np.eye(6), Z.shape), atol=1e-12)


def test_windowed_full_length_single_output(rng):
    Z = windowed_spd(rng.normal(size=(7, 5, 2)), 7)
    assert Z.shape[0] == 1
    assert np.linalg.eigvalsh(Z).min() > 0


def test_windowed_unregularized_is_psd(rng):
    Z = windowed_spd(rng.normal(size=(5, 4, 2)), 3, eps=1e-6) - 1e-6 * np.eye(6)
    assert np.linalg.eigvalsh(Z).min() > -1e-10


def test_windowed_matches_direct_formula(rng):
    series = rng.normal(size=(4, 6, 2))
    Z = windowed_spd(series, 4, eps=1e-6, frame_eps=0.0)[0] - 1e-6 * np.eye(6)
    vecs = []
    for frame in series:
        mu = frame.mean(axis=0)
        S = (frame - mu).T @ (frame - mu) / len(frame)
        vecs.append(lower_flatten(linalg.spd_fn(gaussian_embed(mu, S), "log")))
    V = np.array(vecs)
    D = V - V.mean(axis=0)
    np.testing.assert_allclose(Z, D.T @ D / 4, atol=1e-10)


def test_windowed_2d_series_and_errors(rng):
    flat = rng.normal(size=(6, 8))
    np.testing.assert_array_equal(windowed_spd(flat, 3, joints=4),
                                  windowed_spd(flat.reshape(6, 4, 2), 3))
    with pytest.raises(ValueError):
        windowed_spd(flat, 3)
    with pytest.raises(ValueError):
        windowed_spd(flat, 1, joints=4)
    with pytest.raises(ValueError):
        windowed_spd(flat, 7, joints=4)
    bad = flat.copy()
    bad[2, 3] = np.nan
    with pytest.raises(DomainError):
        windowed_spd(bad, 3, joints=4)


def test_pyramid_and_neighbor_features(rng):
    assert pyramid_windows(20, 2) == [20, 10]
    S = rng.normal(size=(3, 3, 2))
    out = neighbor_features(S, [[1], [2], [0]])
    assert out.shape == (3, 3, 4)
    np.testing.assert_array_equal(out[:, 0, 2:], S[:, 1])


# synthetic SPD classes

def test_synth_spd_zero_noise_equals_prototypes():
    X, y = synth_spd_classes(3, 5, 4, 0.0, seed=1)
    for c in range(3):
        np.testing.assert_allclose(X[y == c], np.broadcast_to(X[y == c][0], (5, 4, 4)))
    assert np.bincount(y).tolist() == [5, 5, 5]


def test_synth_spd_deterministic():
    a = synth_spd_classes(2, 4, 3, 0.1, seed=9)
    b = synth_spd_classes(2, 4, 3, 0.1, seed=9)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


def test_synth_spd_separation_seed_42():
    X, y = synth_spd_classes(3, 100, 8, 0.1, seed=42)
    L = linalg.spd_fn(X, "log")
    protos = np.array([L[y == c].mean(axis=0) for c in range(3)])
    spread = max(np.linalg.norm(L[y == c] - protos[c], axis=(1, 2)).max() for c in range(3))
    between = min(np.linalg.norm(protos[i] - protos[j])
                  for i in range(3) for j in range(i + 1, 3))
    assert between > 3 * spread


def test_stratified_split():
    y = np.repeat([0, 1, 2], 100)
    tr, te = train_test_split_stratified(y, 200, seed=42)
    assert len(tr) == 200 and len(te) == 100
    assert np.bincount(y[tr]).tolist() == [67, 67, 66]
    assert not set(tr) & set(te)
    tr2, _ = train_test_split_stratified(y, 200, seed=42)
    np.testing.assert_array_equal(tr, tr2)


# graphs

def test_sbm_no_cross_edges():
    g = synth_sbm_graph(30, 3, 0.5, 0.0, seed=0)
    for i, j in g.edges():
        assert g.labels[i] == g.labels[j]


def test_sbm_deterministic_and_split():
    a = synth_sbm_graph(100, 3, 0.3, 0.02, seed=7)
    b = synth_sbm_graph(100, 3, 0.3, 0.02, seed=7)
    assert a.edges() == b.edges()
    np.testing.assert_array_equal(a.features, b.features)
    assert (a.train_mask.sum(), a.dev_mask.sum(), a.test_mask.sum()) == (70, 15, 15)
    assert not np.any(a.train_mask & a.test_mask)
    assert all(i in nb for i, nb in enumerate(a.neighbors))


def test_sbm_mean_intra_degree():
    degs = []
    for seed in range(20):
        g = synth_sbm_graph(60, 3, 0.3, 0.0, seed=seed)
        degs.append(np.mean([len(nb) - 1 for nb in g.neighbors]))
    assert np.mean(degs) == pytest.approx(0.3 * 19, rel=0.1)


def test_sbm_rejects_bad_probabilities():
    with pytest.raises(ValueError):
        synth_sbm_graph(10, 2, 0.1, 0.2)


def _write(path, text):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    return str(path)


@pytest.fixture
def triangle(tmp_path):
    e = _write(tmp_path / "e.tsv", "a\tb\nb\tc\nc\ta\nb\ta\n")
    f = _write(tmp_path / "f.csv", "1,0\n0,1\n1,1\n")
    lab = _write(tmp_path / "l.csv", "node,label\na,0\nb,1\nc,0\n")
    return e, f, lab


def test_load_graph_triangle(triangle):
    g = load_graph(*triangle)
    assert [len(nb) for nb in g.neighbors] == [3, 3, 3]
    assert g.edges() == [(0, 1), (0, 2), (1, 2)]
    assert g.node_ids == ["a", "b", "c"]
    np.testing.assert_array_equal(g.features[2], [1.0, 1.0])


def test_graph_roundtrip(tmp_path):
    g = synth_sbm_graph(20, 2, 0.5, 0.1, seed=2)
    paths = [str(tmp_path / n) for n in ("e.tsv", "f.csv", "l.csv")]
    write_graph(g, *paths)
    h = load_graph(*paths, seed=2)
    assert h.edges() == g.edges()
    np.testing.assert_array_equal(h.features, g.features)
    np.testing.assert_array_equal(h.labels, g.labels)
    np.testing.assert_array_equal(h.test_mask, g.test_mask)


@pytest.mark.parametrize("which,text,line", [
    ("l", "node,label\na,0\na,1\n", 3),
    ("l", "node,label\na,0\nb\n", 3),
    ("f", "1,0\n0\n1,1\n", 2),
    ("f", "1,0\n0,x\n1,1\n", 2),
    ("e", "a\tb\na\tz\n", 2),
])
def test_load_graph_parse_errors(tmp_path, triangle, which, text, line):
    e, f, lab = triangle
    bad = _write(tmp_path / "bad", text)
    args = {"e": (bad, f, lab), "f": (e, bad, lab), "l": (e, f, bad)}[which]
    with pytest.raises(ParseError) as info:
        load_graph(*args)
    assert info.value.line == line


def test_sequences_roundtrip(tmp_path, rng):
    X = rand_spd(rng, 3, size=(4, 2))
    write_sequences(str(tmp_path / "seq"), X, [0, 1, 1, 0])
    Y, y = load_sequences(str(tmp_path / "seq"))
    np.testing.assert_array_equal(Y, X)
    assert y.tolist() == [0, 1, 1, 0]


def test_sequences_missing_manifest(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_sequences(str(tmp_path))


def test_graph_from_edges_self_loops():
    g = Graph.from_edges(3, [(0, 1)], np.zeros((3, 1)), [0, 1, 0])
    assert g.neighbors == [[0, 1], [0, 1], [2]]
    assert g.node_ids == ["0", "1", "2"]
