"""Input pipelines, synthetic datasets and file formats.

File formats
------------
Edge list
    UTF-8 text, one undirected edge per line: ``src<TAB>dst``.  Blank lines
    and lines starting with ``#`` are skipped.
Features
    CSV, one row of floats per node, in the order of the label file.
Labels
    CSV with a header ``node,label`` followed by one ``node,label`` row per
    node.  Node ids are arbitrary tokens and are remapped to ``0..N-1`` in
    file order.
SPD sequences
    A directory with ``manifest.csv`` (header ``sample,label,length``) and
    one CSV file per matrix named ``s{sample}_t{t}.csv``.
"""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .autodiff import functions as F
from .exceptions import DomainError, ParseError
from .linalg import read_matrix_csv, write_matrix_csv
from .validation import check_spd

__all__ = ["gaussian_embed", "beta_embed", "lower_flatten", "lower_unflatten", "windowed_spd",
           "pyramid_windows", "neighbor_features", "synth_spd_classes", "Graph",
           "synth_sbm_graph", "load_graph", "write_graph", "train_test_split_stratified",
           "write_sequences", "load_sequences"]


# Gaussian embeddings

def gaussian_embed(mu, Sigma) -> np.ndarray:
    """Embed a Gaussian as the SPD matrix ``[[Σ + μμᵀ, μ], [μᵀ, 1]]``.

    Parameters
    ----------
    mu : ndarray, shape (..., d)
    Sigma : ndarray, shape (..., d, d)
        SPD covariance.

    Returns
    -------
    Y : ndarray, shape (..., d+1, d+1)

    Raises
    ------
    DomainError
        If ``Sigma`` is not SPD.

    Examples
    --------
    >>> gaussian_embed(np.array([2.0]), np.array([[1.0]]))
    array([[5., 2.],
           [2., 1.]])
    """
    mu = np.asarray(mu, dtype=float)
    Sigma = check_spd(np.asarray(Sigma, dtype=float))
    d = mu.shape[-1]
    Y = np.zeros(mu.shape[:-1] + (d + 1, d + 1))
    Y[..., :d, :d] = Sigma + mu[..., :, None] * mu[..., None, :]
    Y[..., :d, d] = mu
    Y[..., d, :d] = mu
    Y[..., d, d] = 1.0
    return Y


def beta_embed(mu, Sigma, k: int = 1) -> np.ndarray:
    """Determinant-normalized embedding of a Gaussian with ``k`` mean columns.

    ``(det Σ)^{-1/(d+k)} [[Σ + k μμᵀ, μ(k)], [μ(k)ᵀ, I_k]]`` with ``μ(k)``
    the ``d x k`` matrix whose columns all equal ``μ``.

    Parameters
    ----------
    mu : ndarray, shape (d,)
    Sigma : ndarray, shape (d, d)
    k : int, default=1

    Returns
    -------
    Y : ndarray, shape (d+k, d+k)
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    mu = np.asarray(mu, dtype=float)
    Sigma = check_spd(np.asarray(Sigma, dtype=float))
    d = mu.shape[-1]
    Mk = np.repeat(mu[:, None], k, axis=1)
    Y = np.zeros((d + k, d + k))
    Y[:d, :d] = Sigma + Mk @ Mk.T
    Y[:d, d:] = Mk
    Y[d:, :d] = Mk.T
    Y[d:, d:] = np.eye(k)
    _, logdet = np.linalg.slogdet(Sigma)
    return np.exp(-logdet / (d + k)) * Y


# windowed covariance pipeline

def _lower_index(n: int):
    """Column-major indices (i, j), i >= j, of the lower triangle."""
    cols, rows = np.triu_indices(n)
    return rows, cols


def lower_flatten(A) -> np.ndarray:
    """Lower triangle including the diagonal, column-major, shape (..., n(n+1)/2)."""
    A = np.asarray(A)
    r, c = _lower_index(A.shape[-1])
    return A[..., r, c]


def lower_unflatten(v, n: int) -> np.ndarray:
    """Symmetric matrix from :func:`lower_flatten` output."""
    v = np.asarray(v)
    r, c = _lower_index(n)
    A = np.zeros(v.shape[:-1] + (n, n))
    A[..., r, c] = v
    A[..., c, r] = v
    return A


def _frame_gaussians(series, joints):
    S = np.asarray(series, dtype=float)
    if S.ndim == 2:
        if joints is None:
            raise ValueError("2-D series need `joints` to split each frame into points")
        T, d = S.shape
        if d % joints:
            raise ValueError(f"feature dimension {d} is not divisible by joints={joints}")
        S = S.reshape(T, joints, d // joints)
    if S.ndim != 3:
        raise ValueError(f"series must be (T, J, f) or (T, d), got shape {S.shape}")
    if not np.all(np.isfinite(S)):
        raise DomainError("series contains non-finite values")
    mu = S.mean(axis=1)
    D = S - mu[:, None, :]
    Sigma = np.einsum("tji,tjk->tik", D, D) / S.shape[1]
    return mu, Sigma


def windowed_spd(series, window: int, eps: float | None = None, stride: int = 1,
                 joints: int | None = None, frame_eps: float = 1e-6) -> np.ndarray:
    """SPD sequence of windowed covariances of log-Gaussian frame features.

    Each frame is a set of ``J`` points in ``R^f``; its mean and covariance
    (plus ``frame_eps I``) are embedded with :func:`gaussian_embed`, mapped by
    the matrix logarithm and flattened with :func:`lower_flatten`.  Every
    window of ``window`` frames yields the covariance of these vectors plus
    ``eps I``.

    Parameters
    ----------
    series : ndarray, shape (T, J, f) or (T, d)
        Frames; a 2-D series is reshaped to ``(T, joints, d / joints)``.
    window : int
        Window length ``c >= 2``.
    eps : float, optional
        Regularizer; defaults to ``1e-5 (1 + mean diagonal)`` of each
        window covariance.
    stride : int, default=1
    joints : int, optional
    frame_eps : float, default=1e-6
        Regularizer of the per-frame covariances.

    Returns
    -------
    Z : ndarray, shape (T_out, q, q)
        ``q = (f+1)(f+2)/2`` and ``T_out = (T - window) // stride + 1``.
    """
    if window < 2:
        raise ValueError(f"window must be >= 2, got {window}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    mu, Sigma = _frame_gaussians(series, joints)
    T, f = mu.shape
    if T < window:
        raise ValueError(f"series of length {T} is shorter than the window {window}")
    Y = gaussian_embed(mu, Sigma + frame_eps * np.eye(f))
    V = lower_flatten(F.sym_log(Y))
    out = []
    for s in range(0, T - window + 1, stride):
        W = V[s:s + window]
        D = W - W.mean(axis=0)
        Z = D.T @ D / window
        reg = 1e-5 * (1.0 + np.mean(np.diag(Z))) if eps is None else eps
        out.append(Z + reg * np.eye(len(Z)))
    Z = np.stack(out)
    check_spd(Z)
    return Z


def pyramid_windows(T: int, levels: int = 2) -> list:
    """Window lengths of a temporal pyramid: ``T``, ``T/2``, ... (``levels`` scales)."""
    if levels < 1:
        raise ValueError("levels must be >= 1")
    out = [max(2, T // (2 ** l)) for l in range(levels)]
    return out


def neighbor_features(series, pairs) -> np.ndarray:
    """Concatenate each coordinate block with configured neighbour blocks.

    Parameters
    ----------
    series : ndarray, shape (T, J, f)
        ``J`` blocks (for example joints) of ``f`` coordinates per frame.
    pairs : sequence of sequence of int
        ``pairs[j]`` lists the blocks joined to block ``j``.

    Returns
    -------
    out : ndarray, shape (T, J, f * (1 + len(pairs[0])))
    """
    S = np.asarray(series, dtype=float)
    if S.ndim != 3 or len(pairs) != S.shape[1]:
        raise ValueError("series must be (T, J, f) with one neighbour list per block")
    widths = {len(p) for p in pairs}
    if len(widths) != 1:
        raise ValueError("every block needs the same number of neighbours")
    return np.stack([np.concatenate([S[:, j]] + [S[:, k] for k in pairs[j]], axis=-1)
                     for j in range(S.shape[1])], axis=1)


# synthetic SPD classes

def _sym_normal(rng, n, size=()):
    A = rng.normal(size=tuple(size) + (n, n))
    U = np.triu(A)
    return U + np.swapaxes(np.triu(A, 1), -1, -2)


def synth_spd_classes(C: int, per_class: int, n: int, sigma: float, seed: int = 0):
    """Labelled SPD matrices ``exp(A_c + sigma N)`` around class prototypes ``exp(A_c)``.

    ``A_c`` and ``N`` are symmetric with independent ``N(0, 1)`` entries on
    and above the diagonal.

    Returns
    -------
    X : ndarray, shape (C * per_class, n, n)
    y : ndarray of int, shape (C * per_class,)
        Balanced labels; samples are shuffled.
    """
    if C < 1 or per_class < 1 or n < 1 or sigma < 0:
        raise ValueError("C, per_class and n must be positive and sigma non-negative")
    rng = np.random.default_rng(seed)
    A = _sym_normal(rng, n, (C,))
    noise = _sym_normal(rng, n, (C, per_class))
    X = F.sym_exp(A[:, None] + sigma * noise).reshape(C * per_class, n, n)
    y = np.repeat(np.arange(C), per_class)
    order = rng.permutation(len(y))
    return X[order], y[order]


def train_test_split_stratified(y, n_train: int, seed: int = 0):
    """Stratified split of indices with exactly ``n_train`` training samples.

    Per-class quotas are proportional to class sizes, with largest-remainder
    rounding.
    """
    y = np.asarray(y)
    if not 0 < n_train < len(y):
        raise ValueError(f"n_train must be in (0, {len(y)}), got {n_train}")
    rng = np.random.default_rng(seed)
    classes, counts = np.unique(y, return_counts=True)
    exact = counts * n_train / len(y)
    quota = np.floor(exact).astype(int)
    extra = np.argsort(-(exact - quota), kind="stable")[:n_train - quota.sum()]
    quota[extra] += 1
    train = []
    for c, q in zip(classes, quota):
        train.extend(rng.permutation(np.flatnonzero(y == c))[:q])
    train = np.sort(np.array(train, dtype=int))
    test = np.setdiff1d(np.arange(len(y)), train)
    return train, test


# graphs

@dataclass
class Graph:
    """Undirected graph with node features, labels and split masks.

    Attributes
    ----------
    neighbors : list of list of int
        Sorted neighbourhoods, self-loops included.
    features : ndarray, shape (N, d)
    labels : ndarray, shape (N,)
    train_mask, dev_mask, test_mask : ndarray of bool, shape (N,)
    node_ids : list of str
        Original node ids in index order.
    """

    neighbors: list
    features: np.ndarray
    labels: np.ndarray
    train_mask: np.ndarray
    dev_mask: np.ndarray
    test_mask: np.ndarray
    node_ids: list = field(default_factory=list)

    @property
    def n_nodes(self) -> int:
        return len(self.neighbors)

    def edges(self) -> list:
        """Undirected edges ``(i, j)``, ``i < j``, excluding self-loops."""
        return [(i, j) for i, nb in enumerate(self.neighbors) for j in nb if i < j]

    @classmethod
    def from_edges(cls, n_nodes: int, edges, features, labels, seed: int = 0,
                   split=(0.7, 0.15, 0.15), node_ids=None) -> "Graph":
        """Build a graph with self-loops and a stratified random split."""
        nb = [{i} for i in range(n_nodes)]
        for i, j in edges:
            nb[i].add(j)
            nb[j].add(i)
        labels = np.asarray(labels)
        train, dev, test = _split_masks(labels, seed, split)
        ids = list(node_ids) if node_ids is not None else [str(i) for i in range(n_nodes)]
        return cls([sorted(s) for s in nb], np.asarray(features, dtype=float), labels,
                   train, dev, test, ids)


def _split_masks(labels, seed, split):
    rng = np.random.default_rng(seed)
    N = len(labels)
    masks = [np.zeros(N, bool) for _ in range(3)]
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        n_tr = int(round(split[0] * len(idx)))
        n_dev = int(round(split[1] * len(idx)))
        masks[0][idx[:n_tr]] = True
        masks[1][idx[n_tr:n_tr + n_dev]] = True
        masks[2][idx[n_tr + n_dev:]] = True
    return masks


def synth_sbm_graph(nodes: int, C: int, p_in: float, p_out: float, d: int | None = None,
                    seed: int = 0, feature_noise: float = 1.0) -> Graph:
    """Stochastic block model graph with noisy one-hot community features.

    Parameters
    ----------
    nodes : int
    C : int
        Number of communities, assigned round-robin.
    p_in, p_out : float
        Edge probabilities within and across communities, ``p_in > p_out``.
    d : int, optional
        Feature dimension ``>= C``; defaults to ``C``.  The first ``C``
        features are the one-hot community, all get Gaussian noise.
    seed : int, default=0
    feature_noise : float, default=1.0
        Standard deviation of the feature noise.

    Returns
    -------
    Graph
        With a stratified 70/15/15 train/dev/test split.
    """
    if not 0 <= p_out < p_in <= 1:
        raise ValueError(f"need 0 <= p_out < p_in <= 1, got p_in={p_in}, p_out={p_out}")
    d = C if d is None else d
    if d < C:
        raise ValueError(f"feature dimension {d} is smaller than the number of communities {C}")
    rng = np.random.default_rng(seed)
    labels = np.arange(nodes) % C
    prob = np.where(labels[:, None] == labels[None, :], p_in, p_out)
    draw = rng.random((nodes, nodes))
    iu = np.triu_indices(nodes, 1)
    hit = draw[iu] < prob[iu]
    edges = list(zip(iu[0][hit].tolist(), iu[1][hit].tolist()))
    feats = rng.normal(scale=feature_noise, size=(nodes, d))
    feats[np.arange(nodes), labels] += 1.0
    return Graph.from_edges(nodes, edges, feats, labels, seed=seed)


def _read_rows(path, delimiter):
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            yield lineno, [t.strip() for t in s.split(delimiter)]


def load_graph(edge_file, feature_file, label_file, seed: int = 0,
               split=(0.7, 0.15, 0.15)) -> Graph:
    """Read a graph from an edge list, a feature CSV and a label CSV.

    Duplicate edges collapse to one; self-loops are added to every node.

    Raises
    ------
    ParseError
        On ragged or non-numeric rows, duplicate node ids in the label file,
        unknown node ids in the edge list and feature/label count mismatch.
    """
    ids: dict = {}
    labels = []
    for lineno, row in _read_rows(label_file, ","):
        if not ids and not labels and row == ["node", "label"]:
            continue
        if len(row) != 2:
            raise ParseError(f"{label_file}: expected 'node,label', got {len(row)} fields",
                             line=lineno)
        node, lab = row
        if node in ids:
            raise ParseError(f"{label_file}: duplicate node id {node!r}", line=lineno)
        try:
            labels.append(int(lab))
        except ValueError:
            raise ParseError(f"{label_file}: label {lab!r} is not an integer", line=lineno)
        ids[node] = len(ids)
    if not ids:
        raise ParseError(f"{label_file}: no nodes", line=0)
    feats = []
    width = None
    for lineno, row in _read_rows(feature_file, ","):
        try:
            vals = [float(t) for t in row]
        except ValueError:
            raise ParseError(f"{feature_file}: non-numeric feature", line=lineno)
        if width is None:
            width = len(vals)
        if len(vals) != width:
            raise ParseError(f"{feature_file}: ragged row ({len(vals)} values, expected {width})",
                             line=lineno)
        if not np.all(np.isfinite(vals)):
            raise ParseError(f"{feature_file}: non-finite feature", line=lineno)
        if len(feats) >= len(ids):
            raise ParseError(f"{feature_file}: more feature rows than labelled nodes",
                             line=lineno)
        feats.append(vals)
    if len(feats) != len(ids):
        raise ParseError(f"{feature_file}: {len(feats)} feature rows for {len(ids)} nodes",
                         line=0)
    edges = set()
    for lineno, row in _read_rows(edge_file, "\t"):
        if len(row) != 2:
            raise ParseError(f"{edge_file}: expected 'src<TAB>dst'", line=lineno)
        for t in row:
            if t not in ids:
                raise ParseError(f"{edge_file}: unknown node id {t!r}", line=lineno)
        i, j = ids[row[0]], ids[row[1]]
        if i != j:
            edges.add((min(i, j), max(i, j)))
    return Graph.from_edges(len(ids), sorted(edges), np.array(feats), np.array(labels),
                            seed=seed, split=split, node_ids=list(ids))


def write_graph(graph: Graph, edge_file, feature_file, label_file) -> None:
    """Write ``graph`` in the formats read by :func:`load_graph`."""
    ids = graph.node_ids or [str(i) for i in range(graph.n_nodes)]
    with open(edge_file, "w", encoding="utf-8") as fh:
        for i, j in graph.edges():
            fh.write(f"{ids[i]}\t{ids[j]}\n")
    with open(feature_file, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in np.asarray(graph.features):
            w.writerow([repr(float(x)) for x in row])
    with open(label_file, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node", "label"])
        for i, lab in enumerate(graph.labels):
            w.writerow([ids[i], int(lab)])


# SPD sequence directories

def write_sequences(directory, seqs, labels) -> None:
    """Write SPD sequences (list of (T_i, n, n) arrays) and their labels."""
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "manifest.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample", "label", "length"])
        for s, (seq, lab) in enumerate(zip(seqs, labels)):
            seq = np.asarray(seq)
            w.writerow([s, int(lab), len(seq)])
            for t, M in enumerate(seq):
                write_matrix_csv(os.path.join(directory, f"s{s}_t{t}.csv"), M)


def load_sequences(directory):
    """Read a sequence directory written by :func:`write_sequences`.

    Returns
    -------
    X : ndarray, shape (N, T, n, n)
        All sequences must share ``T`` and ``n``.
    y : ndarray of int, shape (N,)

    Raises
    ------
    ParseError
        On a malformed manifest or matrix file.
    DomainError
        If a matrix is not SPD.
    """
    path = os.path.join(directory, "manifest.csv")
    if not os.path.isfile(path):
        raise FileNotFoundError(f"no manifest.csv in {directory}")
    seqs, labels = [], []
    for lineno, row in _read_rows(path, ","):
        if row == ["sample", "label", "length"]:
            continue
        if len(row) != 3:
            raise ParseError(f"{path}: expected 'sample,label,length'", line=lineno)
        try:
            s, lab, T = (int(t) for t in row)
        except ValueError:
            raise ParseError(f"{path}: non-integer field", line=lineno)
        mats = [read_matrix_csv(os.path.join(directory, f"s{s}_t{t}.csv")) for t in range(T)]
        seqs.append(np.stack(mats))
        labels.append(lab)
    if not seqs:
        raise ParseError(f"{path}: no samples", line=0)
    if len({q.shape for q in seqs}) != 1:
        raise ParseError(f"{path}: sequences differ in length or matrix size", line=0)
    X = np.stack(seqs)
    check_spd(X)
    return X, np.array(labels)
