"""Gyrovector spaces of SPD matrices under the AI, LE and LC metrics.

Points are SPD matrices of shape ``(..., n, n)``.  Each metric has a notion
of *identity coordinates*: a linear chart of the tangent space at the
identity in which the metric's inner product at ``I`` is Frobenius (AI adds
the ``beta * Tr * Tr`` term).

========  ====================  ==================================
metric    coords(P)             inner product of coordinates
========  ====================  ==================================
``ai``    log P                 <a, b>_F + beta Tr(a) Tr(b)
``le``    log P                 <a, b>_F
``lc``    ⌊L⌋ + log 𝔻(L)        <a, b>_F  (L the Cholesky factor)
========  ====================  ==================================

All functions accept numpy arrays or autodiff Tensors.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .autodiff import functions as F
from .autodiff.core import Tensor, value_of
from .exceptions import DegenerateHyperplaneError
from .validation import check_same_shape, check_spd, check_sym

__all__ = ["SpdMetric", "AI", "LE", "LC", "as_metric", "spd_add", "spd_inv", "spd_sub",
           "spd_log_id", "spd_exp_id", "spd_coords", "coords_to_spd", "tangent_to_coords",
           "coord_inner", "spd_inner", "spd_inner_id", "spd_norm", "spd_exp", "spd_log",
           "spd_transport", "spd_metric_at", "gyration_spd", "spd_gyrodistance",
           "spd_gyroangle_cos", "SpdBasis", "spd_basis", "basis_pairs", "fc_output_from_v",
           "spd_fc_forward", "spd_conv_forward", "SpdHyperplane",
           "spd_pseudo_gyrodistance", "spd_pseudo_gyrodistance_ai_thm",
           "spd_pseudo_gyrodistance_lc_thm", "spd_mlr_logits", "random_spd"]

_METRICS = ("ai", "le", "lc")


@dataclass(frozen=True)
class SpdMetric:
    """Riemannian metric on SPD matrices.

    Parameters
    ----------
    name : {"ai", "le", "lc"}
        Affine-invariant, Log-Euclidean or Log-Cholesky.
    beta : float, default=0.0
        Trace weight of the AI metric; must exceed ``-1/m`` for ``m x m``
        matrices.  Ignored by the other metrics.
    """

    name: str
    beta: float = 0.0

    def __post_init__(self):
        name = str(self.name).lower()
        if name not in _METRICS:
            raise ValueError(f"unknown SPD metric {self.name!r}; expected one of {_METRICS}")
        object.__setattr__(self, "name", name)
        if name != "ai" and self.beta != 0.0:
            raise ValueError(f"beta is only defined for the AI metric, got beta={self.beta}")

    def check_size(self, m: int) -> None:
        if self.name == "ai" and not self.beta > -1.0 / m:
            raise ValueError(f"AI metric needs beta > -1/m = {-1.0 / m:.4g}, got {self.beta}")

    def __str__(self):
        return self.name if self.beta == 0 else f"{self.name}(beta={self.beta})"


AI = SpdMetric("ai")
LE = SpdMetric("le")
LC = SpdMetric("lc")


def as_metric(metric, beta: float | None = None) -> SpdMetric:
    """Coerce a tag or :class:`SpdMetric` into an :class:`SpdMetric`."""
    if isinstance(metric, SpdMetric):
        if beta is not None and beta != metric.beta:
            return SpdMetric(metric.name, beta)
        return metric
    return SpdMetric(metric, 0.0 if beta is None else beta)


def _size(P) -> int:
    return value_of(P).shape[-1]


# Cholesky-space helpers

def _psi(P):
    """⌊L⌋ + log 𝔻(L) for the Cholesky factor L of P."""
    L = F.cholesky(P)
    return F.add(F.lower_strict(L), F.diag_embed(F.log(F.diagonal(L))))


def _psi_inv_factor(psi):
    """Cholesky factor with ⌊L⌋ = ⌊psi⌋ and 𝔻(L) = exp 𝔻(psi)."""
    return F.add(F.lower_strict(psi), F.diag_embed(F.exp(F.diagonal(psi))))


def _gram(L):
    return F.matmul(L, F.mT(L))


def _half(V):
    """V_{1/2}: strictly lower part plus half the diagonal."""
    return F.add(F.lower_strict(V), F.mul(F.diag_part(V), 0.5))


# identity coordinates

def spd_coords(metric, P):
    """Identity coordinates of ``P`` (see module docstring)."""
    metric = as_metric(metric)
    if metric.name == "lc":
        return _psi(P)
    return F.sym_log(P)


def coords_to_spd(metric, c):
    """Inverse of :func:`spd_coords`."""
    metric = as_metric(metric)
    if metric.name == "lc":
        return _gram(_psi_inv_factor(c))
    return F.sym_exp(c)


def tangent_to_coords(metric, V):
    """Identity coordinates of a symmetric tangent vector at ``I``."""
    metric = as_metric(metric)
    if metric.name == "lc":
        return _half(V)
    return V


def coords_to_tangent(metric, c):
    """Symmetric tangent vector at ``I`` from identity coordinates."""
    metric = as_metric(metric)
    if metric.name == "lc":
        return F.add(c, F.mT(c))
    return c


def coord_inner(metric, a, b):
    """Inner product of identity coordinates."""
    metric = as_metric(metric)
    out = F.inner(a, b)
    if metric.name == "ai" and metric.beta != 0.0:
        out = F.add(out, F.mul(F.mul(F.trace(a), F.trace(b)), metric.beta))
    return out


def spd_log_id(metric, P):
    """Log_I(P) as a symmetric matrix."""
    return coords_to_tangent(metric, spd_coords(metric, P))


def spd_exp_id(metric, V):
    """Exp_I(V) for a symmetric tangent vector ``V`` at the identity."""
    return coords_to_spd(metric, tangent_to_coords(metric, V))


def spd_inner_id(metric, V, W):
    """Metric at the identity evaluated on symmetric tangent vectors."""
    return coord_inner(metric, tangent_to_coords(metric, V), tangent_to_coords(metric, W))


def spd_inner(metric, P, Q):
    """SPD inner product <P, Q> = <Log_I P, Log_I Q>_I."""
    return coord_inner(metric, spd_coords(metric, P), spd_coords(metric, Q))


def spd_norm(metric, P):
    return F.sqrt(spd_inner(metric, P, P))


# gyro operations

def spd_add(metric, P, Q):
    """Gyro addition P ⊕ Q.

    Examples
    --------
    >>> import numpy as np
    >>> np.allclose(spd_add("lc", np.diag([4., 9.]), np.diag([4., 9.])), np.diag([16., 81.]))
    True
    """
    metric = as_metric(metric)
    check_same_shape(P, Q)
    if metric.name == "ai":
        R = F.sym_sqrt(P)
        return F.sym(F.matmul(F.matmul(R, Q), R))
    if metric.name == "le":
        return F.sym_exp(F.add(F.sym_log(P), F.sym_log(Q)))
    LP, LQ = F.cholesky(P), F.cholesky(Q)
    L = F.add(F.add(F.lower_strict(LP), F.lower_strict(LQ)),
              F.mul(F.diag_part(LP), F.diag_part(LQ)))
    return _gram(L)


def spd_inv(metric, P):
    """Gyro inverse ⊖P."""
    metric = as_metric(metric)
    if metric.name == "ai":
        return F.sym(F.inv(P))
    if metric.name == "le":
        return F.sym_exp(F.neg(F.sym_log(P)))
    L = F.cholesky(P)
    Li = F.sub(F.diag_embed(F.div(1.0, F.diagonal(L))), F.lower_strict(L))
    return _gram(Li)


def spd_sub(metric, P, X):
    """⊖P ⊕ X."""
    return spd_add(metric, spd_inv(metric, P), X)


def gyration_spd(metric, A, B, C):
    """gyr[A, B]C = ⊖(A ⊕ B) ⊕ (A ⊕ (B ⊕ C))."""
    return spd_add(metric, spd_inv(metric, spd_add(metric, A, B)),
                   spd_add(metric, A, spd_add(metric, B, C)))


# Riemannian Exp / Log / parallel transport (numpy oracles)

def _eig(P):
    lam, Q = np.linalg.eigh(0.5 * (P + np.swapaxes(P, -1, -2)))
    return lam, Q


def _frechet(S, H, f, df):
    """Fréchet derivative of the spectral function f at S in direction H."""
    lam, Q = _eig(S)
    D = F.divided_differences(lam, f, df)
    QT = np.swapaxes(Q, -1, -2)
    return Q @ (D * (QT @ H @ Q)) @ QT


def _powm(P, t):
    lam, Q = _eig(P)
    return (Q * lam[..., None, :] ** t) @ np.swapaxes(Q, -1, -2)


def _lc_to_chol_tangent(L, V):
    Li = np.linalg.inv(L)
    return L @ value_of(_half(Li @ V @ np.swapaxes(Li, -1, -2)))


def _chol_to_spd_tangent(L, X):
    return L @ np.swapaxes(X, -1, -2) + X @ np.swapaxes(L, -1, -2)


def _dg(L):
    return np.diagonal(L, axis1=-2, axis2=-1)


def spd_exp(metric, P, V):
    """Riemannian exponential Exp_P(V)."""
    metric = as_metric(metric)
    P, V = value_of(P), value_of(V)
    if metric.name == "ai":
        R, Ri = _powm(P, 0.5), _powm(P, -0.5)
        return R @ value_of(F.sym_exp(Ri @ V @ Ri)) @ R
    if metric.name == "le":
        S = value_of(F.sym_log(P))
        return value_of(F.sym_exp(S + _frechet(P, V, np.log, lambda x: 1.0 / x)))
    L = np.linalg.cholesky(P)
    X = _lc_to_chol_tangent(L, V)
    d = _dg(L)
    K = np.tril(L, -1) + np.tril(X, -1) + F._diag_embed(d * np.exp(_dg(X) / d))
    return K @ np.swapaxes(K, -1, -2)


def spd_log(metric, P, Q):
    """Riemannian logarithm Log_P(Q)."""
    metric = as_metric(metric)
    P, Q = value_of(P), value_of(Q)
    if metric.name == "ai":
        R, Ri = _powm(P, 0.5), _powm(P, -0.5)
        return R @ value_of(F.sym_log(Ri @ Q @ Ri)) @ R
    if metric.name == "le":
        S = value_of(F.sym_log(P))
        return _frechet(S, value_of(F.sym_log(Q)) - S, np.exp, np.exp)
    L, K = np.linalg.cholesky(P), np.linalg.cholesky(Q)
    d = _dg(L)
    X = np.tril(K, -1) - np.tril(L, -1) + F._diag_embed(d * np.log(_dg(K) / d))
    return _chol_to_spd_tangent(L, X)


def spd_transport(metric, P, Q, V):
    """Parallel transport of ``V`` from ``P`` to ``Q`` along the geodesic."""
    metric = as_metric(metric)
    P, Q, V = value_of(P), value_of(Q), value_of(V)
    if metric.name == "ai":
        Ph, Pih = _powm(P, 0.5), _powm(P, -0.5)
        E = Ph @ _powm(Pih @ Q @ Pih, 0.5) @ Pih
        return E @ V @ np.swapaxes(E, -1, -2)
    if metric.name == "le":
        W = _frechet(P, V, np.log, lambda x: 1.0 / x)
        return _frechet(value_of(F.sym_log(Q)), W, np.exp, np.exp)
    L, K = np.linalg.cholesky(P), np.linalg.cholesky(Q)
    X = _lc_to_chol_tangent(L, V)
    Y = np.tril(X, -1) + F._diag_embed(_dg(K) / _dg(L) * _dg(X))
    return _chol_to_spd_tangent(K, Y)


def spd_metric_at(metric, P, V, W):
    """Riemannian metric <V, W>_P."""
    metric = as_metric(metric)
    P, V, W = value_of(P), value_of(V), value_of(W)
    if metric.name == "ai":
        Pi = np.linalg.inv(P)
        a, b = Pi @ V, Pi @ W
        out = np.trace(a @ b, axis1=-2, axis2=-1)
        return out + metric.beta * np.trace(a, axis1=-2, axis2=-1) * np.trace(b, axis1=-2, axis2=-1)
    if metric.name == "le":
        a = _frechet(P, V, np.log, lambda x: 1.0 / x)
        b = _frechet(P, W, np.log, lambda x: 1.0 / x)
        return np.sum(a * b, axis=(-2, -1))
    L = np.linalg.cholesky(P)
    X, Y = _lc_to_chol_tangent(L, V), _lc_to_chol_tangent(L, W)
    d = _dg(L)
    return (np.sum(np.tril(X, -1) * np.tril(Y, -1), axis=(-2, -1))
            + np.sum(_dg(X) / d * _dg(Y) / d, axis=-1))


# gyrodistance and gyroangle

def spd_gyrodistance(metric, X, Y):
    """d(X, Y) = ||⊖X ⊕ Y||."""
    return spd_norm(metric, spd_sub(metric, X, Y))


def spd_gyroangle_cos(metric, P, X, Q):
    """Cosine of the gyroangle at ``P`` between ``X`` and ``Q``."""
    a = spd_coords(metric, spd_sub(metric, P, X))
    b = spd_coords(metric, spd_sub(metric, P, Q))
    num = coord_inner(metric, a, b)
    return F.div(num, F.sqrt(F.mul(coord_inner(metric, a, a), coord_inner(metric, b, b))))


# orthonormal bases

def basis_pairs(m: int) -> list:
    """Index pairs (i, j), i <= j, in row-major order (0-based)."""
    return [(i, j) for i in range(m) for j in range(i, m)]


@dataclass(frozen=True)
class SpdBasis:
    """Orthonormal basis E_(i,j), i <= j, of an SPD gyrovector space.

    Attributes
    ----------
    metric : SpdMetric
    m : int
    pairs : list of (int, int)
        0-based index pairs in row-major order.
    E : ndarray, shape (m(m+1)/2, m, m)
        Basis matrices in the order of ``pairs``.
    """

    metric: SpdMetric
    m: int
    pairs: list = field(repr=False)
    E: np.ndarray = field(repr=False)

    def __len__(self):
        return len(self.pairs)

    def __getitem__(self, ij):
        return self.E[self.pairs.index(tuple(ij))]

    def gram(self) -> np.ndarray:
        """Matrix of pairwise inner products."""
        c = value_of(spd_coords(self.metric, self.E))
        return value_of(coord_inner(self.metric, c[:, None], c[None, :]))


def spd_basis(metric, m: int, beta: float | None = None) -> SpdBasis:
    """Orthonormal basis of the SPD gyrovector space of ``m x m`` matrices.

    Parameters
    ----------
    metric : str or SpdMetric
    m : int
    beta : float, optional
        AI trace weight, overrides ``metric.beta``.

    Notes
    -----
    For LC the diagonal elements are ``I + (e^2 - 1) e_i e_iᵀ`` (Cholesky
    diagonal entry ``e``), which makes them unit vectors.
    """
    metric = as_metric(metric, beta)
    if m < 1:
        raise ValueError(f"m must be positive, got {m}")
    metric.check_size(m)
    pairs = basis_pairs(m)
    E = np.zeros((len(pairs), m, m))
    eye = np.eye(m)
    if metric.name in ("ai", "le"):
        c = 0.0
        if metric.name == "ai":
            c = (1.0 - 1.0 / np.sqrt(1.0 + m * metric.beta)) / m
        for k, (i, j) in enumerate(pairs):
            if i == j:
                d = np.full(m, -c)
                d[i] += 1.0
                E[k] = np.diag(np.exp(d))
            else:
                S = np.zeros((m, m))
                S[i, j] = S[j, i] = 1.0 / np.sqrt(2.0)
                E[k] = value_of(F.sym_exp(S))
    else:
        for k, (i, j) in enumerate(pairs):
            if i == j:
                E[k] = eye.copy()
                E[k, i, i] = np.e ** 2
            else:
                a = eye.copy()
                a[j, i] = 1.0
                E[k] = a @ a.T
    return SpdBasis(metric, m, pairs, E)


# FC and convolutional layers

def _fc_maps(metric: SpdMetric, m: int):
    pairs = basis_pairs(m)
    K = len(pairs)
    M = np.zeros((K, m, m))
    diag_idx = []
    if metric.name == "lc":
        for k, (i, j) in enumerate(pairs):
            if i == j:
                diag_idx.append(k)
            else:
                M[k, j, i] = 1.0
        return M.reshape(K, m * m), np.array(diag_idx)
    alpha = 0.0
    if metric.name == "ai":
        alpha = (np.sqrt(1.0 + m * metric.beta) - 1.0) / m
    for k, (i, j) in enumerate(pairs):
        if i == j:
            M[k] = alpha * np.eye(m)
            M[k, i, i] += 1.0
        else:
            M[k, i, j] = M[k, j, i] = 1.0 / np.sqrt(2.0)
    return M.reshape(K, m * m), np.array(diag_idx, dtype=int)


def fc_output_from_v(metric, v, m: int):
    """FC-layer output from the signed coordinates ``v`` of shape (..., K).

    AI/LE: ``Y = exp([y])`` with the trace correction ``alpha`` on the
    diagonal.  LC: ``Y = Ȳ Ȳᵀ`` with Ȳ lower triangular, diagonal
    ``exp(v_ii)`` and ``Ȳ_ji = v_ij``.
    """
    metric = as_metric(metric)
    metric.check_size(m)
    Mflat, diag_idx = _fc_maps(metric, m)
    vv = value_of(v)
    if vv.shape[-1] != Mflat.shape[0]:
        raise ValueError(f"expected {Mflat.shape[0]} coordinates for m={m}, got {vv.shape[-1]}")
    lead = vv.shape[:-1]
    y = F.reshape(F.matmul(v, Mflat), lead + (m, m))
    if metric.name == "lc":
        Yb = F.add(y, F.diag_embed(F.exp(F.getitem(v, (Ellipsis, diag_idx)))))
        return _gram(Yb)
    return F.sym_exp(y)


def spd_fc_forward(metric, X, P, W, m: int | None = None):
    """Output of an SPD fully-connected layer.

    Parameters
    ----------
    metric : str or SpdMetric
    X : array_like, shape (..., n, n)
        Input SPD matrices.
    P, W : array_like, shape (K, n, n)
        SPD parameters ``P_(i,j)`` and ``W_(i,j)`` for the ``K = m(m+1)/2``
        index pairs of :func:`basis_pairs`.
    m : int, optional
        Output size, inferred from ``K`` when omitted.

    Returns
    -------
    Y : array_like, shape (..., m, m)
    """
    metric = as_metric(metric)
    K = value_of(P).shape[0]
    if m is None:
        m = int(round((np.sqrt(8 * K + 1) - 1) / 2))
    if m * (m + 1) // 2 != K or value_of(W).shape[0] != K:
        raise ValueError(f"need m(m+1)/2 = {m * (m + 1) // 2} parameter pairs, got {K}")
    Xe = X if isinstance(X, Tensor) else value_of(X)
    n = value_of(X).shape[-1]
    lead = value_of(X).shape[:-2]
    Xb = F.reshape(Xe, lead + (1, n, n))
    c = spd_coords(metric, spd_sub(metric, P, Xb))
    v = coord_inner(metric, c, spd_coords(metric, W))
    return fc_output_from_v(metric, v, m)


def spd_conv_forward(metric, seq, P_blocks, W, window: int, stride: int = 1,
                     m: int | None = None):
    """SPD convolution over a sequence of SPD matrices.

    Parameters
    ----------
    seq : array_like, shape (..., T, n, n)
    P_blocks : array_like, shape (K, window, n, n)
        Per-slot blocks of the block-diagonal ``P_(i,j)`` parameters.
    W : array_like, shape (K, window*n, window*n)
    window, stride : int

    Returns
    -------
    out : array_like, shape (..., T_out, m, m)
        ``T_out = (T - window) // stride + 1``.
    """
    sv = value_of(seq)
    T = sv.shape[-3]
    if window < 1 or stride < 1:
        raise ValueError("window and stride must be positive")
    if window > T:
        raise ValueError(f"window {window} exceeds sequence length {T}")
    starts = list(range(0, T - window + 1, stride))
    wins = [F.block_diag([F.getitem(seq, (Ellipsis, t + l, slice(None), slice(None)))
                          for l in range(window)]) for t in starts]
    Xw = F.stack(wins, axis=-3)
    P = F.block_diag([F.getitem(P_blocks, (slice(None), l)) for l in range(window)])
    return spd_fc_forward(metric, Xw, P, W, m)


# hypergyroplanes

@dataclass
class SpdHyperplane:
    """Hypergyroplane through ``P`` with normal ``A`` given at the identity.

    Attributes
    ----------
    P : array_like, shape (n, n)
        Base point (SPD).
    A : array_like, shape (n, n)
        Symmetric normal, equal to Log_I of the normal point.
    """

    P: object
    A: object

    def normal_coords(self, metric):
        return tangent_to_coords(metric, self.A)


def spd_pseudo_gyrodistance(metric, X, H: SpdHyperplane, signed: bool = False):
    """Pseudo-gyrodistance from ``X`` to the hypergyroplane ``H``.

    Evaluated as ``|<coords(⊖P ⊕ X), a>| / ||a||`` with ``a`` the identity
    coordinates of the normal, which is exact for every metric and every
    admissible ``beta``.

    Raises
    ------
    DegenerateHyperplaneError
        If the normal vanishes.
    """
    metric = as_metric(metric)
    a = H.normal_coords(metric)
    den = F.sqrt(coord_inner(metric, a, a))
    if np.any(value_of(den) <= 1e-300):
        raise DegenerateHyperplaneError("hypergyroplane normal is zero")
    num = coord_inner(metric, spd_coords(metric, spd_sub(metric, H.P, X)), a)
    out = F.div(num, den)
    return out if signed else F.abs(out)


def spd_pseudo_gyrodistance_ai_thm(X, P, W):
    """AI (beta = 0) closed form with ``W`` a tangent vector at ``P``."""
    Ri = F.sym_invsqrt(P)
    A = F.matmul(F.matmul(Ri, W), Ri)
    L = F.sym_log(F.matmul(F.matmul(Ri, X), Ri))
    return F.div(F.abs(F.inner(L, A)), F.frob_norm(A))


def spd_pseudo_gyrodistance_lc_thm(X, P, W):
    """LC closed form with ``W`` a tangent vector at ``P``."""
    LP, LX = F.cholesky(P), F.cholesky(X)
    DP = F.diagonal(LP)
    A = F.add(F.sub(F.lower_strict(LX), F.lower_strict(LP)),
              F.diag_embed(F.log(F.div(F.diagonal(LX), DP))))
    LPi = F.inv(LP)
    Wt = F.matmul(LP, _half(F.matmul(F.matmul(LPi, W), F.mT(LPi))))
    B = F.add(F.lower_strict(Wt), F.diag_embed(F.div(F.diagonal(Wt), DP)))
    return F.div(F.abs(F.inner(A, B)), F.frob_norm(B))


def spd_mlr_logits(metric, X, classes: Sequence[SpdHyperplane]):
    """Signed MLR scores ``<coords(⊖P_c ⊕ X), a_c>`` for every class.

    Parameters
    ----------
    X : array_like, shape (..., n, n)
    classes : sequence of SpdHyperplane

    Returns
    -------
    logits : array_like, shape (..., C)
    """
    metric = as_metric(metric)
    if len(classes) < 2:
        raise ValueError("MLR needs at least two classes")
    cols = []
    for H in classes:
        a = H.normal_coords(metric)
        cols.append(coord_inner(metric, spd_coords(metric, spd_sub(metric, H.P, X)), a))
    return F.stack(cols, axis=-1)


def random_spd(rng: np.random.Generator, n: int, size=(), scale: float = 1.0) -> np.ndarray:
    """Random SPD matrices ``exp(S)`` with Gaussian symmetric ``S``."""
    shape = tuple(np.atleast_1d(size)) if size != () else ()
    A = rng.normal(scale=scale / np.sqrt(2.0), size=shape + (n, n))
    return value_of(F.sym_exp(A + np.swapaxes(A, -1, -2)))
