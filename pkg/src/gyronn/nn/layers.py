"""Trainable layers on SPD, Grassmann and structure-space manifolds.

Every layer keeps its trainable parameters in unconstrained spaces: SPD
parameters are symmetric matrices mapped by Exp at the identity, Grassmann
parameters are ``p x (n-p)`` matrices ``B`` mapped through the skew
embedding ``exp([[0, B], [-Bᵀ, 0]]) Ĩ_{n,p}``.  Layers are stateless
descriptions; parameters live in a flat ``dict`` of arrays so that any
optimizer can update them in place.
"""
from __future__ import annotations

import numpy as np

from .. import grassmann as gr
from .. import spd
from ..autodiff import functions as F
from ..autodiff.core import value_of
from ..exceptions import ConfigError
from ..spd import SpdMetric, as_metric
from ..spsd import (CommonSubspaceState, SpsdConfig, SpsdHyperplane, canonicalize_decomposed,
                    spsd_decompose)
from ..grassmann import gr_geodesic, gr_mean

__all__ = ["SymParam", "SkewBParam", "SpdConv", "SpdFC", "SpdMLR", "SpsdMLR",
           "GcnEmbed", "GcnLayer", "GcnHead", "normalized_adjacency"]


def _rand_sym(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    A = rng.normal(scale=std, size=shape)
    return (A + np.swapaxes(A, -1, -2)) / np.sqrt(2.0)


class SymParam:
    """Unconstrained square matrix mapped to an SPD matrix.

    The stored array ``S`` is symmetrized and sent through Exp at the
    identity of the chosen metric (``exp`` for AI and LE).
    """

    @staticmethod
    def sym(S):
        return F.sym(S)

    @staticmethod
    def to_spd(S, metric="ai"):
        return spd.spd_exp_id(metric, F.sym(S))


class SkewBParam:
    """Unconstrained ``p x (n-p)`` matrix ``B`` mapped to a Grassmann point."""

    @staticmethod
    def rotation(B):
        """``exp([[0, B], [-Bᵀ, 0]])``."""
        return F.mat_exp(gr.skew_from_coords(F.neg(B)))

    @staticmethod
    def to_onb(B):
        return gr.skew_param_onb(B)

    @staticmethod
    def to_projector(B):
        return gr.skew_param(B)


# SPD layers

def _flat_sub_coords(metric: SpdMetric, X, S_P, Xcoords=None):
    """Identity coordinates of ⊖P ⊕ X for ``P = Exp_I(S_P)``.

    ``X`` has shape (..., 1, n, n) and ``S_P`` (K, n, n).  LE and LC are
    flat, so only AI needs a matrix function per parameter.
    """
    if metric.name == "ai":
        R = F.sym_exp(F.mul(S_P, -0.5))
        return F.sym_log(F.sym(F.matmul(F.matmul(R, X), R))), None
    if Xcoords is None:
        Xcoords = spd.spd_coords(metric, X)
    return Xcoords, spd.tangent_to_coords(metric, S_P)


def _signed_scores(metric: SpdMetric, X, S_P, a):
    """``<coords(⊖P ⊕ X), a>`` with ``a`` of shape (K, n, n) and X (..., n, n)."""
    Xv = value_of(X)
    n = Xv.shape[-1]
    Xb = F.reshape(X, Xv.shape[:-2] + (1, n, n))
    c, shift = _flat_sub_coords(metric, Xb, S_P)
    v = spd.coord_inner(metric, c, a)
    if shift is not None:
        v = F.sub(v, spd.coord_inner(metric, shift, a))
    return v


class SpdConv:
    """SPD convolution followed by the FC map to ``m x m`` outputs.

    Parameters
    ----------
    metric : str or SpdMetric, default="ai"
    n : int
        Size of the input matrices.
    m : int
        Size of the output matrices.
    window, stride : int, default=1
    beta : float, optional
        AI trace weight.
    init_std : float, optional
        Standard deviation of the random symmetric ``W`` parameters,
        ``1 / (window * n)`` by default.
    diag_offsets : array_like of shape (m,), optional
        Target shifts of the diagonal output coordinates ``v_(i,i)`` at
        initialization, realized through the ``P_(i,i)`` parameters.

    Notes
    -----
    Parameters: ``P`` of shape (K, window, n, n) holds the symmetric logs
    of the diagonal blocks of ``P_(i,j)`` and ``W`` of shape (K, Ln, Ln)
    the symmetric logs of ``W_(i,j)``, with ``K = m(m+1)/2``.
    """

    def __init__(self, metric="ai", n: int = 8, m: int = 8, window: int = 1, stride: int = 1,
                 beta: float | None = None, init_std: float | None = None, diag_offsets=None):
        self.metric = as_metric(metric, beta)
        if n < 1 or m < 1 or window < 1 or stride < 1:
            raise ConfigError("n, m, window and stride must be positive")
        self.metric.check_size(window * n)
        self.metric.check_size(m)
        self.n, self.m, self.window, self.stride = n, m, window, stride
        self.K = m * (m + 1) // 2
        self.init_std = init_std
        self.diag_offsets = diag_offsets

    def init_params(self, rng: np.random.Generator) -> dict:
        Ln = self.window * self.n
        std = 1.0 / Ln if self.init_std is None else self.init_std
        W = _rand_sym(rng, (self.K, Ln, Ln), std)
        P = np.zeros((self.K, self.window, self.n, self.n))
        if self.diag_offsets is not None:
            off = np.asarray(self.diag_offsets, dtype=float)
            if off.shape != (self.m,):
                raise ConfigError(f"diag_offsets must have length m={self.m}")
            W, P = self._apply_offsets(W, P, off)
        return {"P": P, "W": W}

    def _apply_offsets(self, W, P, off):
        Ln = self.window * self.n
        diag_k = [k for k, (i, j) in enumerate(spd.basis_pairs(self.m)) if i == j]
        W = W.copy()
        W[diag_k] += np.eye(Ln) / Ln
        eye = np.broadcast_to(np.eye(Ln), (1, 1, Ln, Ln))
        base = value_of(self._v(eye, np.zeros_like(P), W))[0, 0]
        neg = value_of(self._v(eye, np.broadcast_to(-np.eye(self.n), P.shape), W))[0, 0]
        coef = neg - base
        for i, k in enumerate(diag_k):
            if abs(coef[k]) < 1e-8:
                raise ConfigError("diag_offsets: cannot realize offset with this W")
            P[k] = -(off[i] / coef[k]) * np.eye(self.n)
        return W, P

    def _windows(self, seq):
        sv = value_of(seq)
        T = sv.shape[-3]
        if self.window > T:
            raise ValueError(f"window {self.window} exceeds sequence length {T}")
        starts = range(0, T - self.window + 1, self.stride)
        if self.window == 1:
            idx = np.array(list(starts))
            return F.getitem(seq, (Ellipsis, idx, slice(None), slice(None)))
        wins = [F.block_diag([F.getitem(seq, (Ellipsis, t + l, slice(None), slice(None)))
                              for l in range(self.window)]) for t in starts]
        return F.stack(wins, axis=-3)

    def _blocks(self, P):
        S = F.sym(P)
        if self.window == 1:
            return F.getitem(S, (slice(None), 0))
        return F.block_diag([F.getitem(S, (slice(None), l)) for l in range(self.window)])

    def _v(self, Xw, P, W):
        S_P = self._blocks(P)
        a = spd.tangent_to_coords(self.metric, F.sym(W))
        return _signed_scores(self.metric, Xw, S_P, a)

    def forward(self, params: dict, seq):
        """Map sequences (..., T, n, n) to outputs (..., T_out, m, m)."""
        Xw = self._windows(seq)
        v = self._v(Xw, params["P"], params["W"])
        return spd.fc_output_from_v(self.metric, v, self.m)

    def spd_params(self, params: dict):
        """Realized SPD parameters ``(P_blocks, W)`` as numpy arrays."""
        return (value_of(SymParam.to_spd(params["P"], self.metric)),
                value_of(SymParam.to_spd(params["W"], self.metric)))


class SpdFC(SpdConv):
    """SPD fully-connected layer, the ``window = 1`` case of :class:`SpdConv`.

    Maps inputs (..., n, n) to outputs (..., m, m).
    """

    def __init__(self, metric="ai", n: int = 8, m: int = 8, beta: float | None = None,
                 init_std: float | None = None, diag_offsets=None):
        super().__init__(metric, n, m, 1, 1, beta, init_std, diag_offsets)

    def forward(self, params: dict, X):
        v = self._v(X, params["P"], params["W"])
        return spd.fc_output_from_v(self.metric, v, self.m)


class SpdMLR:
    """Gyro-MLR head on SPD matrices.

    Logits are the signed numerators ``<coords(⊖P_c ⊕ X), a_c>`` of the
    pseudo-gyrodistances to the class hypergyroplanes.  Parameters ``P``
    (C, n, n) and ``A`` (C, n, n) are symmetric: ``P_c = Exp_I(P)`` and the
    normal is ``A_c`` at the identity.
    """

    def __init__(self, metric="le", n: int = 8, n_classes: int = 2, beta: float | None = None,
                 init_std: float | None = None):
        if n_classes < 2:
            raise ConfigError("MLR needs at least two classes")
        self.metric = as_metric(metric, beta)
        self.metric.check_size(n)
        self.n, self.n_classes = n, n_classes
        self.init_std = init_std

    def init_params(self, rng: np.random.Generator) -> dict:
        std = 1.0 / self.n if self.init_std is None else self.init_std
        A = _rand_sym(rng, (self.n_classes, self.n, self.n), std)
        params = {"P": np.zeros((self.n_classes, self.n, self.n)), "A": A}
        self.check_params(params)
        return params

    def check_params(self, params: dict) -> None:
        norms = np.linalg.norm(value_of(params["A"]).reshape(self.n_classes, -1), axis=1)
        if np.any(norms == 0):
            raise ConfigError("MLR class normal is zero (degenerate hypergyroplane)")

    def forward(self, params: dict, X):
        """Logits (..., C) for inputs (..., n, n)."""
        a = spd.tangent_to_coords(self.metric, F.sym(params["A"]))
        return _signed_scores(self.metric, X, F.sym(params["P"]), a)

    def hyperplanes(self, params: dict) -> list:
        P = value_of(SymParam.to_spd(params["P"], self.metric))
        A = value_of(F.sym(params["A"]))
        return [spd.SpdHyperplane(P[c], A[c]) for c in range(self.n_classes)]


class SpsdMLR:
    """Gyro-MLR head on rank-``p`` SPSD matrices in the structure space.

    Inputs are decomposed, the running common subspace is updated in
    training mode and every sample is canonicalized before the signed
    numerator ``lam <C(⊖̃U_P ⊕̃ U_X), C_W> + <⊖S_P ⊕ S_X, S_W>_g`` is
    returned for each class.

    Parameters
    ----------
    cfg : SpsdConfig
    n : int
        Size of the input matrices.
    p : int
        Rank, ``1 <= p < n``.
    n_classes : int

    Notes
    -----
    Parameters per class: ``B_P`` (p, n-p) with ``U_P`` the skew embedding
    of ``B_P``, symmetric ``S_P`` (p, p) with ``S_P = Exp_I``, the Grassmann
    normal coordinates ``C_W`` (p, n-p) and the symmetric SPD normal
    ``A_W`` (p, p).
    """

    def __init__(self, cfg: SpsdConfig | None = None, n: int = 8, p: int = 4,
                 n_classes: int = 2, init_std: float | None = None):
        self.cfg = SpsdConfig() if cfg is None else cfg
        if not 1 <= p < n:
            raise ConfigError(f"need 1 <= p < n, got p={p}, n={n}")
        if n_classes < 2:
            raise ConfigError("MLR needs at least two classes")
        self.cfg.spd_metric.check_size(p)
        self.n, self.p, self.n_classes = n, p, n_classes
        self.init_std = init_std
        self.state = CommonSubspaceState(n, p)

    def init_params(self, rng: np.random.Generator) -> dict:
        C, n, p = self.n_classes, self.n, self.p
        std = 1.0 / n if self.init_std is None else self.init_std
        params = {"B_P": np.zeros((C, p, n - p)), "S_P": np.zeros((C, p, p)),
                  "C_W": rng.normal(scale=std, size=(C, p, n - p)),
                  "A_W": _rand_sym(rng, (C, p, p), std)}
        self.check_params(params)
        return params

    def check_params(self, params: dict) -> None:
        met = self.cfg.spd_metric
        a = value_of(spd.tangent_to_coords(met, F.sym(params["A_W"])))
        den = (self.cfg.lam * np.sum(value_of(params["C_W"]) ** 2, axis=(-2, -1))
               + value_of(spd.coord_inner(met, a, a)))
        if np.any(den <= 0):
            raise ConfigError("structure-space class normal is zero (degenerate hypergyroplane)")

    def forward(self, params: dict, X, training: bool = False):
        """Logits (N, C) for SPSD inputs (N, n, n)."""
        cfg = self.cfg
        U, S_raw = spsd_decompose(X, self.p)
        if training:
            Ubar = gr_mean(value_of(U), init=self.state.U)
            self.state.U = gr_geodesic(self.state.U, Ubar, cfg.gamma)
        Xc = canonicalize_decomposed(U, S_raw, self.state.U)
        # frame of ⊖̃U_P is exp(-[[0, B_P], [-B_Pᵀ, 0]]) Ĩ
        R = SkewBParam.rotation(F.neg(params["B_P"]))
        Uv = value_of(Xc.U)
        Ub = F.reshape(Xc.U, Uv.shape[:-2] + (1,) + Uv.shape[-2:])
        C = gr.gr_log_id(F.matmul(R, Ub))
        g = F.mul(F.inner(C, params["C_W"]), cfg.lam)
        a = spd.tangent_to_coords(cfg.spd_metric, F.sym(params["A_W"]))
        s = _signed_scores(cfg.spd_metric, Xc.S, F.sym(params["S_P"]), a)
        return F.add(g, s)

    def hyperplanes(self, params: dict) -> list:
        U = value_of(SkewBParam.to_onb(params["B_P"]))
        S = value_of(SymParam.to_spd(params["S_P"], self.cfg.spd_metric))
        C_W = value_of(params["C_W"])
        A_W = value_of(F.sym(params["A_W"]))
        return [SpsdHyperplane(U[c], S[c], C_W[c], A_W[c]) for c in range(self.n_classes)]


# Grassmann GCN

def normalized_adjacency(neighbors) -> np.ndarray:
    """Matrix of weights ``k_ij = |N(i)|^{-1/2} |N(j)|^{-1/2}`` for ``j in N(i)``.

    Parameters
    ----------
    neighbors : sequence of sequence of int
        Neighbourhoods, self-loops included.
    """
    N = len(neighbors)
    deg = np.array([len(nb) for nb in neighbors], dtype=float)
    if np.any(deg < 1):
        raise ValueError("every node needs at least one neighbour (add self-loops)")
    K = np.zeros((N, N))
    for i, nb in enumerate(neighbors):
        for j in nb:
            K[i, j] = 1.0 / np.sqrt(deg[i] * deg[j])
    return K


def _check_perspective(perspective: str) -> str:
    if perspective not in ("projector", "onb"):
        raise ConfigError(f"perspective must be 'projector' or 'onb', got {perspective!r}")
    return perspective


class GcnEmbed:
    """Linear map of node features to ``B`` followed by the skew embedding.

    Parameters ``W`` (d, p(n-p)) and ``b`` (p(n-p),).
    """

    def __init__(self, d: int, n: int, p: int, perspective: str = "projector",
                 init_std: float | None = None):
        if not 1 <= p < n:
            raise ConfigError(f"need 1 <= p < n, got p={p}, n={n}")
        self.d, self.n, self.p = d, n, p
        self.perspective = _check_perspective(perspective)
        self.init_std = init_std

    def init_params(self, rng: np.random.Generator) -> dict:
        q = self.p * (self.n - self.p)
        std = 0.3 / np.sqrt(self.d) if self.init_std is None else self.init_std
        return {"W": rng.normal(scale=std, size=(self.d, q)), "b": np.zeros(q)}

    def forward(self, params: dict, features):
        fv = value_of(features)
        B = F.add(F.matmul(features, params["W"]), params["b"])
        B = F.reshape(B, fv.shape[:-1] + (self.p, self.n - self.p))
        if self.perspective == "onb":
            return SkewBParam.to_onb(B)
        return SkewBParam.to_projector(B)


class GcnLayer:
    """Grassmann graph convolution: transform, aggregate, bias, nonlinearity.

    ``P_j = φ_M(X_j)``, ``Q_i = Exp_I(sum_j k_ij Log_I P_j)``,
    ``X'_i = σ(B ⊕ Q_i)``, with ``M`` and ``B`` given by ``p x (n-p)``
    parameters ``M`` and ``B`` through the skew embedding.
    """

    def __init__(self, n: int, p: int, perspective: str = "projector",
                 init_std: float = 0.1):
        if not 1 <= p < n:
            raise ConfigError(f"need 1 <= p < n, got p={p}, n={n}")
        self.n, self.p = n, p
        self.perspective = _check_perspective(perspective)
        self.init_std = init_std

    def init_params(self, rng: np.random.Generator) -> dict:
        shape = (self.p, self.n - self.p)
        return {"M": rng.normal(scale=self.init_std, size=shape), "B": np.zeros(shape)}

    def forward(self, params: dict, X, K: np.ndarray):
        """Update node features ``X`` (N, n, n) or (N, n, p) with weights ``K`` (N, N)."""
        p, q = self.p, self.n - self.p
        N = value_of(X).shape[0]
        RM = SkewBParam.rotation(params["M"])
        RB = SkewBParam.rotation(params["B"])
        if self.perspective == "onb":
            C = gr.gr_log_id(F.matmul(RM, X))
        else:
            P = F.sym(F.matmul(F.matmul(RM, X), F.mT(RM)))
            C = gr.gr_log_id(gr.tau_inv(P, p))
        agg = F.reshape(F.matmul(K, F.reshape(C, (N, p * q))), (N, p, q))
        if self.perspective == "onb":
            return gr.gr_nonlinearity_onb(F.matmul(RB, gr.gr_exp_id_onb(agg)))
        Q = gr.gr_exp_id(agg)
        return gr.gr_nonlinearity(F.sym(F.matmul(F.matmul(RB, Q), F.mT(RB))))


class GcnHead:
    """Affine classifier on the flattened identity coordinates of Log_I(X).

    Parameters ``W`` (p(n-p), C) and ``b`` (C,).
    """

    def __init__(self, n: int, p: int, n_classes: int, perspective: str = "projector"):
        self.n, self.p, self.n_classes = n, p, n_classes
        self.perspective = _check_perspective(perspective)

    def init_params(self, rng: np.random.Generator) -> dict:
        q = self.p * (self.n - self.p)
        return {"W": rng.normal(scale=1.0 / np.sqrt(q), size=(q, self.n_classes)),
                "b": np.zeros(self.n_classes)}

    def forward(self, params: dict, X):
        N = value_of(X).shape[0]
        U = X if self.perspective == "onb" else gr.tau_inv(X, self.p)
        C = F.reshape(gr.gr_log_id(U), (N, self.p * (self.n - self.p)))
        return F.add(F.matmul(C, params["W"]), params["b"])
