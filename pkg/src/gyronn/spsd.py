"""Structure space Gr~(n, p) x Sym+(p) for rank-p SPSD matrices.

A rank-``p`` SPSD matrix ``X = U S Uᵀ`` is represented by a frame ``U``
(``n x p``) and an SPD shape matrix ``S`` (``p x p``).  Representations are
made comparable by rotating ``U`` onto a common subspace (canonicalization)
before the Grassmann and SPD gyro operations are applied componentwise.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import grassmann as gr
from . import spd
from .autodiff import functions as F
from .autodiff.core import Tensor, value_of
from .exceptions import AlignmentError, DegenerateHyperplaneError, RankError
from .grassmann import gr_geodesic, gr_mean
from .spd import SpdMetric, as_metric

__all__ = ["StructurePoint", "SpsdConfig", "SpsdHyperplane", "CommonSubspaceState",
           "spsd_decompose", "canonicalize", "canonicalize_decomposed", "psd_add",
           "psd_inv", "psd_inner", "psd_norm", "psd_sub_coords", "psd_pseudo_gyrodistance",
           "batch_pseudo_gyrodistances", "gr_mean", "gr_geodesic", "structure_identity"]


@dataclass
class StructurePoint:
    """Pair ``(U, S)`` representing ``U S Uᵀ``.

    Attributes
    ----------
    U : array_like, shape (..., n, p)
        Orthonormal frame.
    S : array_like, shape (..., p, p)
        SPD shape matrix.
    """

    U: object
    S: object

    @property
    def n(self) -> int:
        return value_of(self.U).shape[-2]

    @property
    def p(self) -> int:
        return value_of(self.U).shape[-1]

    def to_matrix(self):
        return F.matmul(F.matmul(self.U, self.S), F.mT(self.U))


def structure_identity(n: int, p: int) -> StructurePoint:
    """Identity element (Ĩ_{n,p}, I_p)."""
    return StructurePoint(gr.identity_onb(n, p), np.eye(p))


@dataclass(frozen=True)
class SpsdConfig:
    """Settings of the structure space.

    Parameters
    ----------
    lam : float, default=1.0
        Weight of the Grassmann part of the inner product, must be positive.
    spd_metric : SpdMetric or str, default="ai"
        Metric of the SPD component.
    gamma : float, default=0.1
        Step of the running common-subspace update, in [0, 1].
    """

    lam: float = 1.0
    spd_metric: SpdMetric = field(default_factory=lambda: SpdMetric("ai"))
    gamma: float = 0.1

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"lam must be positive, got {self.lam}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must be in [0, 1], got {self.gamma}")
        object.__setattr__(self, "spd_metric", as_metric(self.spd_metric))


@dataclass
class SpsdHyperplane:
    """Hypergyroplane of the structure space.

    The normal is stored in identity coordinates: ``C_W`` (``p x (n-p)``)
    for the Grassmann part and the symmetric ``A_W = Log_I(S_W)`` for the
    SPD part.

    Attributes
    ----------
    U_P : array_like, shape (n, p)
    S_P : array_like, shape (p, p)
    C_W : array_like, shape (p, n - p)
    A_W : array_like, shape (p, p)
    """

    U_P: object
    S_P: object
    C_W: object
    A_W: object

    @classmethod
    def from_points(cls, P: StructurePoint, W: StructurePoint, metric="ai"):
        """Build from base point ``P`` and normal point ``W``."""
        return cls(P.U, P.S, gr.gr_log_id(W.U), spd.spd_log_id(metric, W.S))


class CommonSubspaceState:
    """Running common subspace ``U_m`` of Algorithm 1.

    Not safe for concurrent mutation: the training loop owns it exclusively
    while :func:`batch_pseudo_gyrodistances` updates it.
    """

    def __init__(self, n: int, p: int, U=None):
        self.U = gr.identity_onb(n, p) if U is None else np.array(value_of(U), dtype=float)

    def copy(self) -> "CommonSubspaceState":
        return copy.deepcopy(self)

    def __eq__(self, other):
        return isinstance(other, CommonSubspaceState) and np.array_equal(self.U, other.U)


def spsd_decompose(X, p: int, rank_tol: float = 1e-10):
    """Top-``p`` eigenpairs of symmetric PSD matrices.

    Returns
    -------
    U : (..., n, p) frames of the leading eigenvectors
    S_raw : (..., p, p) diagonal matrices of the leading eigenvalues

    Raises
    ------
    RankError
        If the ``p``-th eigenvalue of some sample is at most ``rank_tol``.
    """
    lam, Q = F.eigh(X)
    lv = value_of(lam)
    if p < 1 or p > lv.shape[-1]:
        raise ValueError(f"p must be in [1, {lv.shape[-1]}], got {p}")
    bad = lv[..., p - 1] <= rank_tol
    if np.any(bad):
        idx = int(np.flatnonzero(np.atleast_1d(bad))[0])
        raise RankError(f"spsd_decompose: sample {idx} has numerical rank below {p}", index=idx)
    U = F.getitem(Q, (Ellipsis, slice(None), slice(0, p)))
    S = F.diag_embed(F.getitem(lam, (Ellipsis, slice(0, p))))
    return U, S


def _polar_align(U_X, W, tol=1e-10):
    M = F.matmul(F.mT(U_X), W)
    s = np.linalg.svd(value_of(M), compute_uv=False)
    if np.any(s[..., -1] < tol):
        raise AlignmentError("canonicalize: subspaces meet at a principal angle of pi/2")
    return F.matmul(M, F.sym_invsqrt(F.matmul(F.mT(M), M)))


def canonicalize(X, U_X, W) -> StructurePoint:
    """Canonical representation of ``X`` relative to the common subspace ``W``.

    The frame is rotated to ``Ū = U_X O`` with ``O`` the orthogonal polar
    factor of ``U_Xᵀ W`` (equal to ``Y Vᵀ`` for ``U_Xᵀ W = Y cos(Σ) Vᵀ``) and
    the shape becomes ``S̄ = Ūᵀ X Ū``.

    Raises
    ------
    AlignmentError
        If ``U_Xᵀ W`` is singular.
    """
    O = _polar_align(U_X, W)
    Uc = F.matmul(U_X, O)
    S = F.sym(F.matmul(F.matmul(F.mT(Uc), X), Uc))
    return StructurePoint(Uc, S)


def canonicalize_decomposed(U_X, S_raw, W) -> StructurePoint:
    """As :func:`canonicalize` for ``X = U_X S_raw U_Xᵀ`` given in factored form."""
    O = _polar_align(U_X, W)
    return StructurePoint(F.matmul(U_X, O), F.sym(F.matmul(F.matmul(F.mT(O), S_raw), O)))


def psd_add(cfg: SpsdConfig, A: StructurePoint, B: StructurePoint) -> StructurePoint:
    """Componentwise gyro addition (U_A ⊕̃ U_B, S_A ⊕ S_B)."""
    return StructurePoint(gr.gr_add_onb(A.U, B.U), spd.spd_add(cfg.spd_metric, A.S, B.S))


def psd_inv(cfg: SpsdConfig, A: StructurePoint) -> StructurePoint:
    """Componentwise gyro inverse."""
    return StructurePoint(gr.gr_inv_onb(A.U), spd.spd_inv(cfg.spd_metric, A.S))


def psd_inner(cfg: SpsdConfig, A: StructurePoint, B: StructurePoint):
    """lam <U_A U_Aᵀ, U_B U_Bᵀ>_gr + <S_A, S_B>_g."""
    g = F.inner(gr.gr_log_id(A.U), gr.gr_log_id(B.U))
    return F.add(F.mul(g, cfg.lam), spd.spd_inner(cfg.spd_metric, A.S, B.S))


def psd_norm(cfg: SpsdConfig, A: StructurePoint):
    return F.sqrt(psd_inner(cfg, A, A))


def psd_sub_coords(cfg: SpsdConfig, P: StructurePoint, X: StructurePoint):
    """Identity coordinates (C, c) of ⊖P ⊕ X."""
    Ug = gr.gr_add_onb(gr.gr_inv_onb(P.U), X.U)
    C = gr.gr_log_id(Ug)
    c = spd.spd_coords(cfg.spd_metric, spd.spd_sub(cfg.spd_metric, P.S, X.S))
    return C, c


def _hyperplane_terms(cfg, X: StructurePoint, H: SpsdHyperplane):
    met = cfg.spd_metric
    C, c = psd_sub_coords(cfg, StructurePoint(H.U_P, H.S_P), X)
    a = spd.tangent_to_coords(met, H.A_W)
    num = F.add(F.mul(F.inner(C, H.C_W), cfg.lam), spd.coord_inner(met, c, a))
    den2 = F.add(F.mul(F.inner(H.C_W, H.C_W), cfg.lam), spd.coord_inner(met, a, a))
    if np.any(value_of(den2) <= 1e-300):
        raise DegenerateHyperplaneError("structure-space hypergyroplane has a zero normal")
    return num, F.sqrt(den2)


def psd_pseudo_gyrodistance(cfg: SpsdConfig, X: StructurePoint, H: SpsdHyperplane,
                            signed: bool = False):
    """Pseudo-gyrodistance from ``X`` to the hypergyroplane ``H``.

    ``|lam <C(⊖̃U_P ⊕̃ U_X), C_W> + <⊖S_P ⊕ S_X, S_W>_g| /
    sqrt(lam ||C_W||^2 + ||S_W||_g^2)``.
    """
    num, den = _hyperplane_terms(cfg, X, H)
    out = F.div(num, den)
    return out if signed else F.abs(out)


def batch_pseudo_gyrodistances(cfg: SpsdConfig, Xs, classes: Sequence[SpsdHyperplane],
                               state: CommonSubspaceState, training: bool = False,
                               p: int | None = None, signed: bool = False):
    """Distances of a batch of SPSD matrices to every class hypergyroplane.

    Steps: truncated eigen-decomposition, (training only) Karcher mean of
    the batch frames and a ``gamma`` step of ``state.U`` towards it,
    canonicalization against ``state.U``, and the closed-form distance.

    Parameters
    ----------
    Xs : array_like, shape (N, n, n)
    classes : sequence of SpsdHyperplane
    state : CommonSubspaceState
        Updated in place when ``training`` is true, untouched otherwise.
    p : int, optional
        Rank; defaults to the frame width of the first class.

    Returns
    -------
    d : array_like, shape (N, C)
    """
    if not classes:
        raise ValueError("need at least one class")
    if p is None:
        p = value_of(classes[0].U_P).shape[-1]
    U, S_raw = spsd_decompose(Xs, p)
    if training:
        Ubar = gr_mean(value_of(U), init=state.U)
        state.U = gr_geodesic(state.U, Ubar, cfg.gamma)
    Xc = canonicalize_decomposed(U, S_raw, state.U)
    cols = [psd_pseudo_gyrodistance(cfg, Xc, H, signed=signed) for H in classes]
    return F.stack(cols, axis=-1)
