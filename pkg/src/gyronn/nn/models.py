"""Reference architectures with a scikit-learn style estimator API.

* :class:`GyroSpdClassifier`: SPD convolution (AI by default) followed by an
  SPD gyro-MLR head (LE by default).
* :class:`GyroSpsdClassifier`: the same convolution followed by a
  structure-space MLR head on the rank-``p`` part of its output.
* :class:`GrassmannGCNClassifier`: Grassmann graph convolutional network in
  the projector or ONB perspective.
"""
from __future__ import annotations

import warnings

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import ConvergenceWarning
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_is_fitted

from .. import grassmann as gr
from ..autodiff import functions as F
from ..autodiff.core import Tensor, grad, value_of
from ..exceptions import ConfigError, ConvergenceError, CutLocusError, GyroError
from ..spsd import CommonSubspaceState, SpsdConfig
from ..spd import as_metric
from .layers import (GcnEmbed, GcnHead, GcnLayer, SpdConv, SpdMLR, SpsdMLR,
                     normalized_adjacency)
from .losses import cross_entropy, softmax
from .optim import Adam

__all__ = ["GyroSpdClassifier", "GyroSpsdClassifier", "GrassmannGCNClassifier",
           "iterate_minibatches", "flatten_params", "unflatten_params"]


def flatten_params(tree: dict) -> dict:
    """Flatten ``{"layer": {"name": array}}`` to ``{"layer.name": array}``."""
    return {f"{k}.{n}": v for k, sub in tree.items() for n, v in sub.items()}


def unflatten_params(flat: dict) -> dict:
    tree: dict = {}
    for key, v in flat.items():
        layer, name = key.split(".", 1)
        tree.setdefault(layer, {})[name] = v
    return tree


def iterate_minibatches(n: int, batch_size: int, rng: np.random.Generator):
    """Yield index arrays of a random partition of ``range(n)``."""
    order = rng.permutation(n)
    for s in range(0, n, batch_size):
        yield order[s:s + batch_size]


def _as_sequences(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 3:
        X = X[:, None]
    if X.ndim != 4 or X.shape[-1] != X.shape[-2]:
        raise ValueError(f"expected (N, n, n) or (N, T, n, n) SPD input, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("input contains non-finite values")
    return X


class _BaseSpdPipeline(ClassifierMixin, BaseEstimator):
    """Shared training loop of the SPD pipelines."""

    def _build(self, n: int, T: int, n_classes: int):
        raise NotImplementedError

    def _head_input(self, Y):
        """Pool conv outputs (N, T_out, m, m) into one matrix per sample."""
        T_out = value_of(Y).shape[1]
        if T_out == 1:
            return F.getitem(Y, (slice(None), 0))
        return F.block_diag([F.getitem(Y, (slice(None), t)) for t in range(T_out)])

    def _logits(self, params: dict, X, training: bool):
        Y = self.conv_.forward(params["conv"], X)
        Z = self._head_input(Y)
        if isinstance(self.head_, SpsdMLR):
            return self.head_.forward(params["head"], Z, training=training)
        return self.head_.forward(params["head"], Z)

    def _check_manifold(self) -> None:
        for k, v in self.params_.items():
            if not np.all(np.isfinite(v)):
                raise GyroError(f"parameter {k} became non-finite")
        P, W = self.conv_.spd_params(self._params["conv"])
        for name, A in (("P", P), ("W", W)):
            if np.linalg.eigvalsh(A).min() <= 0:
                raise GyroError(f"conv parameter {name} left the SPD manifold")
        if isinstance(self.head_, SpsdMLR):
            U = value_of(gr.skew_param_onb(self._params["head"]["B_P"]))
            eye = np.eye(U.shape[-1])
            if np.abs(np.swapaxes(U, -1, -2) @ U - eye).max() > 1e-8:
                raise GyroError("structure-space base frames lost orthonormality")

    @property
    def params_(self) -> dict:
        """Flat ``{"layer.name": array}`` view of the trained parameters."""
        return flatten_params(self._params)

    def checkpoint_params(self) -> dict:
        """``params_`` plus the running common subspace ``state.U`` of an SPSD head."""
        out = dict(self.params_)
        if isinstance(self.head_, SpsdMLR):
            out["state.U"] = self.head_.state.U
        return out

    def restore(self, params: dict, classes, n: int, T: int = 1):
        """Rebuild a fitted model from :meth:`checkpoint_params` output.

        Parameters
        ----------
        params : dict of str -> ndarray
        classes : array_like
        n, T : int
            Matrix size and sequence length of the inputs.
        """
        params = {k: np.array(v, dtype=float) for k, v in params.items()}
        U = params.pop("state.U", None)
        self.classes_ = np.asarray(classes)
        self.conv_, self.head_ = self._build(n, T, len(self.classes_))
        self._params = unflatten_params(params)
        if U is not None and isinstance(self.head_, SpsdMLR):
            self.head_.state = CommonSubspaceState(*U.shape, U)
        return self

    def fit(self, X, y, eval_set=None):
        """Train on SPD samples.

        Parameters
        ----------
        X : ndarray, shape (N, n, n) or (N, T, n, n)
            SPD matrices or sequences of SPD matrices.
        y : array_like, shape (N,)
        eval_set : list of (str, X, y), optional
            Extra splits evaluated after every epoch and logged in
            ``history_``.

        Returns
        -------
        self
        """
        X = _as_sequences(X)
        y = np.asarray(y)
        check_classification_targets(y)
        if len(X) != len(y):
            raise ValueError(f"{len(X)} samples but {len(y)} labels")
        self.classes_, yi = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ConfigError("need at least two classes")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        rng = np.random.default_rng(self.seed)
        self.conv_, self.head_ = self._build(X.shape[-1], X.shape[1], len(self.classes_))
        self._params = {"conv": self.conv_.init_params(rng), "head": self.head_.init_params(rng)}
        flat = flatten_params(self._params)
        opt = Adam(flat, lr=self.lr)
        self.history_ = []
        self.stop_reason_ = None
        self._log_epoch(0, X, yi, eval_set)
        for epoch in range(1, self.epochs + 1):
            saved = self._snapshot(flat)
            try:
                for idx in iterate_minibatches(len(X), self.batch_size, rng):
                    leaves = {k: Tensor(v) for k, v in flat.items()}
                    loss = cross_entropy(self._logits(unflatten_params(leaves), X[idx], True),
                                         yi[idx])
                    g = grad(loss, list(leaves.values()))
                    opt.step(dict(zip(leaves.keys(), g)))
                self._check_manifold()
                self._log_epoch(epoch, X, yi, eval_set)
            except (CutLocusError, ConvergenceError) as exc:
                if not isinstance(self.head_, SpsdMLR):
                    raise
                # the structure-space ops are undefined past this point: keep the last
                # completed epoch and stop
                self._rollback(flat, saved, epoch)
                self.stop_reason_ = f"epoch {epoch}: {type(exc).__name__}: {exc}"
                warnings.warn(f"training stopped early at {self.stop_reason_}; "
                              f"parameters of epoch {epoch - 1} kept", ConvergenceWarning)
                break
        self.n_epochs_ = self.history_[-1]["epoch"]
        return self

    def _snapshot(self, flat):
        U = self.head_.state.U.copy() if isinstance(self.head_, SpsdMLR) else None
        return {k: v.copy() for k, v in flat.items()}, U

    def _rollback(self, flat, saved, epoch):
        params, U = saved
        for k, v in params.items():
            flat[k][...] = v
        if U is not None:
            self.head_.state.U = U
        self.history_ = [h for h in self.history_ if h["epoch"] < epoch]

    def _evaluate(self, X, yi):
        logits = value_of(self._logits(self._params, X, False))
        loss = float(value_of(cross_entropy(logits, yi)))
        return loss, float(np.mean(np.argmax(logits, axis=1) == yi))

    def _encode(self, y):
        y = np.asarray(y)
        idx = np.searchsorted(self.classes_, y)
        idx = np.clip(idx, 0, len(self.classes_) - 1)
        if np.any(self.classes_[idx] != y):
            raise ValueError("labels not seen during fit")
        return idx

    def _log_epoch(self, epoch, X, yi, eval_set):
        loss, acc = self._evaluate(X, yi)
        self.history_.append({"epoch": epoch, "split": "train", "loss": loss, "accuracy": acc})
        for name, Xe, ye in eval_set or ():
            loss, acc = self._evaluate(_as_sequences(Xe), self._encode(ye))
            self.history_.append({"epoch": epoch, "split": name, "loss": loss, "accuracy": acc})
        if self.verbose:
            print(" ".join(f"{h['split']}: loss={h['loss']:.4f} acc={h['accuracy']:.3f}"
                           for h in self.history_ if h["epoch"] == epoch))

    def decision_function(self, X) -> np.ndarray:
        """Signed MLR scores, shape (N, C)."""
        check_is_fitted(self, "classes_")
        return value_of(self._logits(self._params, _as_sequences(X), False))

    def predict_proba(self, X) -> np.ndarray:
        return softmax(self.decision_function(X))

    def predict(self, X) -> np.ndarray:
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]


class GyroSpdClassifier(_BaseSpdPipeline):
    """SPD convolution followed by an SPD gyro-MLR head.

    Parameters
    ----------
    conv_metric : {"ai", "le", "lc"}, default="ai"
    mlr_metric : {"ai", "le", "lc"}, default="le"
    beta : float, default=0.0
        AI trace weight, used by whichever layer has the AI metric.
    m : int, default=6
        Size of the convolution outputs.
    window, stride : int, default=1
        Temporal window length and stride of the convolution.
    lr : float, default=1e-3
    epochs : int, default=300
    batch_size : int, default=32
    seed : int, default=0
    verbose : bool, default=False

    Attributes
    ----------
    classes_ : ndarray
    history_ : list of dict
        One record per epoch and split with keys ``epoch``, ``split``,
        ``loss`` and ``accuracy``; epoch 0 is the initial model.

    Notes
    -----
    When the convolution yields several windows, their outputs are joined
    into one block-diagonal matrix before the MLR head.

    Examples
    --------
    >>> from gyronn.data import synth_spd_classes
    >>> X, y = synth_spd_classes(3, 10, 4, 0.1, seed=0)
    >>> clf = GyroSpdClassifier(m=3, epochs=2).fit(X, y)
    >>> clf.predict(X).shape
    (30,)
    """

    def __init__(self, conv_metric="ai", mlr_metric="le", beta=0.0, m=6, window=1, stride=1,
                 lr=1e-3, epochs=300, batch_size=32, seed=0, verbose=False):
        self.conv_metric = conv_metric
        self.mlr_metric = mlr_metric
        self.beta = beta
        self.m = m
        self.window = window
        self.stride = stride
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.verbose = verbose

    def _beta(self, tag):
        return self.beta if str(tag).lower() == "ai" else 0.0

    def _build(self, n, T, n_classes):
        conv = SpdConv(self.conv_metric, n, self.m, self.window, self.stride,
                       beta=self._beta(self.conv_metric))
        if self.window > T:
            raise ConfigError(f"window {self.window} exceeds sequence length {T}")
        T_out = (T - self.window) // self.stride + 1
        head = SpdMLR(self.mlr_metric, self.m * T_out, n_classes,
                      beta=self._beta(self.mlr_metric))
        return conv, head


class GyroSpsdClassifier(_BaseSpdPipeline):
    """SPD convolution followed by a structure-space gyro-MLR head.

    Parameters
    ----------
    conv_metric : {"ai", "le", "lc"}, default="ai"
    spd_metric : {"ai", "le", "lc"}, default="ai"
        Metric of the SPD component of the structure space.
    beta : float, default=0.0
    m : int, default=6
    p : int, default=3
        Rank kept by the head, ``p < m``.
    lam : float, default=1.0
        Weight of the Grassmann component.
    gamma : float, default=0.1
        Step of the running common-subspace update.
    subspace_offset : float, default=2.0
        Initial shift ``+c`` of the first ``p`` and ``-c`` of the remaining
        diagonal conv coordinates, which places the leading eigenvectors of
        the conv outputs near the identity subspace.  ``0`` disables it.
    window, stride, lr, epochs, batch_size, seed, verbose
        As in :class:`GyroSpdClassifier`.

    Attributes
    ----------
    classes_ : ndarray
    history_ : list of dict
    state_ : CommonSubspaceState
        Running common subspace, updated only by :meth:`fit`.
    n_epochs_ : int
        Number of completed training epochs.
    stop_reason_ : str or None
        Set when training stopped early because a batch left the domain of
        the structure-space operations (a frame reached the cut locus of the
        identity subspace or the batch mean did not converge).  The
        parameters and state of the last completed epoch are kept and a
        :class:`~sklearn.exceptions.ConvergenceWarning` is issued.
    """

    def __init__(self, conv_metric="ai", spd_metric="ai", beta=0.0, m=6, p=3, lam=1.0,
                 gamma=0.1, subspace_offset=2.0, window=1, stride=1, lr=1e-3, epochs=300,
                 batch_size=32, seed=0, verbose=False):
        self.conv_metric = conv_metric
        self.spd_metric = spd_metric
        self.beta = beta
        self.m = m
        self.p = p
        self.lam = lam
        self.gamma = gamma
        self.subspace_offset = subspace_offset
        self.window = window
        self.stride = stride
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.verbose = verbose

    def _build(self, n, T, n_classes):
        if self.window > T:
            raise ConfigError(f"window {self.window} exceeds sequence length {T}")
        T_out = (T - self.window) // self.stride + 1
        if T_out != 1:
            raise ConfigError("the structure-space head expects one conv output per sample; "
                              "set window equal to the sequence length")
        if not 1 <= self.p < self.m:
            raise ConfigError(f"need 1 <= p < m, got p={self.p}, m={self.m}")
        off = None
        if self.subspace_offset:
            off = np.where(np.arange(self.m) < self.p, 1.0, -1.0) * self.subspace_offset
        beta = self.beta if str(self.conv_metric).lower() == "ai" else 0.0
        conv = SpdConv(self.conv_metric, n, self.m, self.window, self.stride, beta=beta,
                       diag_offsets=off)
        cfg = SpsdConfig(lam=self.lam, spd_metric=as_metric(self.spd_metric), gamma=self.gamma)
        return conv, SpsdMLR(cfg, self.m, self.p, n_classes)

    @property
    def state_(self):
        check_is_fitted(self, "classes_")
        return self.head_.state


class GrassmannGCNClassifier(ClassifierMixin, BaseEstimator):
    """Grassmann graph convolutional network for node classification.

    Parameters
    ----------
    perspective : {"projector", "onb"}, default="projector"
    n, p : int, default=6, 3
        Node features live on Gr(n, p).
    n_layers : int, default=2
        Number of message-passing steps.
    lr : float, default=1e-2
    epochs : int, default=500
    patience : int or None, default=200
        Early stopping on the dev loss: training stops after ``patience``
        epochs without improvement and the parameters of the best dev epoch
        are restored.  ``None`` disables it (the last epoch is kept).
    embed_std : float, default=0.05
        Standard deviation of the initial feature-embedding weights.
    seed : int, default=0
    verbose : bool, default=False

    Attributes
    ----------
    classes_ : ndarray
    history_ : list of dict
        Per-epoch loss and accuracy on the train, dev and test masks.
    best_epoch_ : int
        Epoch whose parameters were kept.

    Notes
    -----
    Training is full batch over the nodes of ``graph.train_mask``.  Early
    stopping needs a non-empty ``graph.dev_mask``; without one the last
    epoch is kept.
    """

    def __init__(self, perspective="projector", n=6, p=3, n_layers=2, lr=1e-2, epochs=500,
                 patience=200, embed_std=0.05, seed=0, verbose=False):
        self.perspective = perspective
        self.n = n
        self.p = p
        self.n_layers = n_layers
        self.lr = lr
        self.epochs = epochs
        self.patience = patience
        self.embed_std = embed_std
        self.seed = seed
        self.verbose = verbose

    def _build(self, d: int, n_classes: int):
        if self.n_layers < 0:
            raise ConfigError("n_layers must be >= 0")
        self.embed_ = GcnEmbed(d, self.n, self.p, self.perspective, init_std=self.embed_std)
        self.layers_ = [GcnLayer(self.n, self.p, self.perspective) for _ in range(self.n_layers)]
        self.head_ = GcnHead(self.n, self.p, n_classes, self.perspective)

    def _logits(self, params: dict, features, K):
        X = self.embed_.forward(params["embed"], features)
        for l, layer in enumerate(self.layers_):
            X = layer.forward(params[f"layer{l}"], X, K)
        return self.head_.forward(params["head"], X)

    def _check_manifold(self) -> None:
        for k, v in self.params_.items():
            if not np.all(np.isfinite(v)):
                raise GyroError(f"parameter {k} became non-finite")

    @property
    def params_(self) -> dict:
        return flatten_params(self._params)

    def checkpoint_params(self) -> dict:
        return dict(self.params_)

    def restore(self, params: dict, classes, d: int):
        """Rebuild a fitted model from flat parameters and the feature dimension ``d``."""
        self.classes_ = np.asarray(classes)
        self._build(d, len(self.classes_))
        self._params = unflatten_params({k: np.array(v, dtype=float) for k, v in params.items()})
        return self

    def fit(self, graph):
        """Train on the labelled nodes of ``graph.train_mask``.

        Parameters
        ----------
        graph : gyronn.data.Graph

        Returns
        -------
        self
        """
        y = np.asarray(graph.labels)
        check_classification_targets(y)
        self.classes_, yi = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ConfigError("need at least two classes")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        rng = np.random.default_rng(self.seed)
        self._build(graph.features.shape[1], len(self.classes_))
        self._params = {"embed": self.embed_.init_params(rng)}
        for l, layer in enumerate(self.layers_):
            self._params[f"layer{l}"] = layer.init_params(rng)
        self._params["head"] = self.head_.init_params(rng)
        K = normalized_adjacency(graph.neighbors)
        feats = np.asarray(graph.features, dtype=float)
        train = np.flatnonzero(graph.train_mask)
        flat = flatten_params(self._params)
        opt = Adam(flat, lr=self.lr)
        self.history_ = []
        use_dev = self.patience is not None and bool(np.any(graph.dev_mask))
        best_loss = self._log_epoch(0, graph, yi, K)
        best = {k: v.copy() for k, v in flat.items()}
        self.best_epoch_ = 0
        for epoch in range(1, self.epochs + 1):
            leaves = {k: Tensor(v) for k, v in flat.items()}
            logits = self._logits(unflatten_params(leaves), feats, K)
            loss = cross_entropy(F.getitem(logits, train), yi[train])
            g = grad(loss, list(leaves.values()))
            opt.step(dict(zip(leaves.keys(), g)))
            self._check_manifold()
            dev_loss = self._log_epoch(epoch, graph, yi, K)
            if not use_dev or dev_loss < best_loss:
                best_loss, self.best_epoch_ = dev_loss, epoch
                best = {k: v.copy() for k, v in flat.items()}
            elif epoch - self.best_epoch_ >= self.patience:
                break
        for k, v in flat.items():
            v[...] = best[k]
        return self

    def _log_epoch(self, epoch, graph, yi, K) -> float:
        """Record per-split metrics and return the dev loss (inf without dev nodes)."""
        logits = value_of(self._logits(self._params, np.asarray(graph.features, float), K))
        dev_loss = np.inf
        for split in ("train", "dev", "test"):
            mask = np.asarray(getattr(graph, f"{split}_mask"), dtype=bool)
            if not mask.any():
                continue
            loss = float(value_of(cross_entropy(logits[mask], yi[mask])))
            acc = float(np.mean(np.argmax(logits[mask], axis=1) == yi[mask]))
            self.history_.append({"epoch": epoch, "split": split, "loss": loss, "accuracy": acc})
            if split == "dev":
                dev_loss = loss
        if self.verbose:
            print(" ".join(f"{h['split']}: loss={h['loss']:.4f} acc={h['accuracy']:.3f}"
                           for h in self.history_ if h["epoch"] == epoch))
        return dev_loss

    def decision_function(self, graph) -> np.ndarray:
        """Logits of every node, shape (N, C)."""
        check_is_fitted(self, "classes_")
        K = normalized_adjacency(graph.neighbors)
        return value_of(self._logits(self._params, np.asarray(graph.features, float), K))

    def predict_proba(self, graph) -> np.ndarray:
        return softmax(self.decision_function(graph))

    def predict(self, graph) -> np.ndarray:
        return self.classes_[np.argmax(self.decision_function(graph), axis=1)]

    def score(self, graph, y=None, split: str = "test") -> float:
        """Accuracy on the nodes of ``graph.<split>_mask``."""
        mask = np.asarray(getattr(graph, f"{split}_mask"), dtype=bool)
        labels = np.asarray(graph.labels) if y is None else np.asarray(y)
        return float(np.mean(self.predict(graph)[mask] == labels[mask]))
