"""Grassmann manifolds in the projector and ONB perspectives.

A point of Gr(n, p) is either a rank-``p`` orthogonal projector ``P``
(``n x n``) or a matrix ``U`` (``n x p``) with orthonormal columns spanning
the subspace; ``tau(U) = U Uᵀ`` links them.

Tangent vectors at the identity ``I_{n,p} = diag(I_p, 0)`` are symmetric
``[[0, C], [Cᵀ, 0]]`` and are handled through their *coordinates*
``C`` of shape ``(p, n - p)``.  The canonical metric at the identity equals
``<C1, C2>_F = Tr(Δ1 Δ2) / 2``.

All functions broadcast over leading axes and accept autodiff Tensors unless
documented as oracle-only.
"""
from __future__ import annotations

import numpy as np

from .autodiff import functions as F
from .autodiff.core import Tensor, value_of
from .exceptions import CutLocusError, ConvergenceError
from .linalg import mat_log_orthogonal
from .validation import check_onb, check_projector

__all__ = ["identity_projector", "identity_onb", "tau", "tau_inv", "commutator",
           "principal_angles", "gr_distance", "gr_log_onb", "gr_exp_onb",
           "gr_log_projector", "gr_log_projector_direct", "gr_exp_projector",
           "coords_to_tangent", "tangent_to_coords", "skew_from_coords", "gr_log_id",
           "gr_exp_id", "gr_exp_id_onb", "gr_add", "gr_inv", "gr_add_onb",
           "gr_inv_onb", "gr_inner", "gr_inner_tangent", "gr_gyrotranslate",
           "gr_nonlinearity", "gr_nonlinearity_onb", "skew_param", "skew_param_onb",
           "gr_geodesic", "gr_mean", "random_onb", "CUT_LOCUS_MARGIN"]

CUT_LOCUS_MARGIN = 1e-6


def identity_projector(n: int, p: int) -> np.ndarray:
    """I_{n,p} = diag(I_p, 0)."""
    if not 0 < p <= n:
        raise ValueError(f"need 0 < p <= n, got n={n}, p={p}")
    out = np.zeros((n, n))
    out[:p, :p] = np.eye(p)
    return out


def identity_onb(n: int, p: int) -> np.ndarray:
    """Ĩ_{n,p}: the first ``p`` columns of I_n."""
    if not 0 < p <= n:
        raise ValueError(f"need 0 < p <= n, got n={n}, p={p}")
    return np.eye(n)[:, :p]


def random_onb(rng: np.random.Generator, n: int, p: int, size=()) -> np.ndarray:
    """Uniformly random orthonormal frames."""
    shape = tuple(np.atleast_1d(size)) if size != () else ()
    Q, R = np.linalg.qr(rng.normal(size=shape + (n, p)))
    d = np.sign(np.diagonal(R, axis1=-2, axis2=-1))
    return Q * d[..., None, :]


def tau(U):
    """Projector U Uᵀ of an orthonormal frame."""
    return F.matmul(U, F.mT(U))


def tau_inv(P, p: int | None = None):
    """Orthonormal basis of range(P).

    Uses the eigenvectors of ``P`` with eigenvalue above 1/2.  The result is
    defined up to a right orthogonal factor.
    """
    Pv = value_of(P)
    if not isinstance(P, Tensor):
        check_projector(Pv)
    if p is None:
        p = int(round(float(np.trace(Pv.reshape((-1,) + Pv.shape[-2:])[0]))))
    lam, Q = F.eigh(P)
    lv = value_of(lam)
    if np.any(lv[..., :p] <= 0.5) or (p < lv.shape[-1] and np.any(lv[..., p:] > 0.5)):
        raise ValueError("tau_inv: input is not a rank-p projector")
    return F.getitem(Q, (Ellipsis, slice(None), slice(0, p)))


def commutator(A, B):
    """[A, B] = AB - BA."""
    return F.sub(F.matmul(A, B), F.matmul(B, A))


def principal_angles(U, V) -> np.ndarray:
    """Principal angles (ascending) between the spans of ``U`` and ``V``."""
    U, V = value_of(U), value_of(V)
    M = np.swapaxes(U, -1, -2) @ V
    c = np.clip(np.linalg.svd(M, compute_uv=False), 0.0, 1.0)  # descending
    s = np.sort(np.linalg.svd(V - U @ M, compute_uv=False), axis=-1)  # ascending
    return np.arctan2(s, c)


def gr_distance(U, V) -> np.ndarray:
    """Geodesic distance (norm of the principal angles)."""
    return np.linalg.norm(principal_angles(U, V), axis=-1)


def _check_cut(M, what="gr_log"):
    """Raise if the p x p block ``M = UᵀV`` signals a principal angle near pi/2."""
    s = np.linalg.svd(value_of(M), compute_uv=False)
    smin = s[..., -1]
    bad = smin < np.sin(CUT_LOCUS_MARGIN)
    if np.any(bad):
        idx = np.argwhere(np.atleast_1d(bad))[0]
        node = int(np.ravel_multi_index(tuple(idx), np.atleast_1d(bad).shape)) if np.ndim(bad) else None
        raise CutLocusError(f"{what}: principal angle within {CUT_LOCUS_MARGIN:g} of pi/2"
                            + (f" (item {node})" if node is not None else ""), node=node)


def gr_log_onb(U, V, method: str = "gram"):
    """Logarithm in the ONB perspective.

    Returns ``Ũ arctan(Σ) Ṽᵀ`` for the thin SVD
    ``(I - UUᵀ) V (UᵀV)^{-1} = Ũ Σ Ṽᵀ``.

    Parameters
    ----------
    U, V : array_like, shape (..., n, p)
    method : {"gram", "svd"}
        ``"gram"`` evaluates the same matrix as ``A h(AᵀA)`` with
        ``h(s) = arctan(√s)/√s``, which stays differentiable when principal
        angles coincide or vanish.  ``"svd"`` follows the SVD literally.

    Raises
    ------
    CutLocusError
        If a principal angle is within 1e-6 of pi/2.
    """
    M = F.matmul(F.mT(U), V)
    _check_cut(M, "gr_log_onb")
    A = F.matmul(F.sub(V, F.matmul(U, M)), F.inv(M))
    if method == "gram":
        return F.matmul(A, F.atan_ratio_fn(F.matmul(F.mT(A), A)))
    if method == "svd":
        Ut, s, Vt = F.svd_thin(A)
        th = F.reshape(F.arctan(s), value_of(s).shape[:-1] + (1, -1))
        return F.matmul(F.mul(Ut, th), F.mT(Vt))
    raise ValueError(f"unknown method {method!r}")


def gr_exp_onb(U, D, reorthonormalize: bool = True) -> np.ndarray:
    """Exponential in the ONB perspective (numpy only).

    ``Exp_U(D) = U V cos(Σ) Vᵀ + W sin(Σ) Vᵀ`` with ``D = W Σ Vᵀ``.
    """
    U, D = value_of(U), value_of(D)
    W, s, Vt = np.linalg.svd(D, full_matrices=False)
    V = np.swapaxes(Vt, -1, -2)
    out = (U @ V * np.cos(s)[..., None, :] + W * np.sin(s)[..., None, :]) @ Vt
    if reorthonormalize:
        Q, R = np.linalg.qr(out)
        d = np.sign(np.diagonal(R, axis1=-2, axis2=-1))
        d[d == 0] = 1.0
        out = Q * d[..., None, :]
    return out


def gr_log_projector(P, Q, U=None, V=None):
    """Logarithm in the projector perspective via ONB representatives.

    ``Log_P(Q) = U L̃ᵀ + L̃ Uᵀ`` with ``U = tau_inv(P)`` and
    ``L̃ = gr_log_onb(U, tau_inv(Q))``.  Any orthonormal bases ``U`` and
    ``V`` of the two subspaces may be passed in; the result does not depend
    on that choice.
    """
    if U is None:
        U = tau_inv(P)
    if V is None:
        V = tau_inv(Q)
    L = gr_log_onb(U, V)
    A = F.matmul(U, F.mT(L))
    return F.add(A, F.mT(A))


def gr_log_projector_direct(P, Q) -> np.ndarray:
    """Oracle-only logarithm ``[Ω, P]`` with ``Ω = log((I-2Q)(I-2P)) / 2``."""
    if isinstance(P, Tensor) or isinstance(Q, Tensor):
        from .exceptions import UnsupportedOpError
        raise UnsupportedOpError("gr_log_projector_direct is an oracle-only routine")
    P, Q = value_of(P), value_of(Q)
    n = P.shape[-1]
    O = (np.eye(n) - 2 * Q) @ (np.eye(n) - 2 * P)
    Om = 0.5 * mat_log_orthogonal(O)
    return Om @ P - P @ Om


def gr_exp_projector(P, D, tol: float = 1e-6):
    """Exponential ``exp([D, P]) P exp(-[D, P])`` in the projector perspective.

    Raises
    ------
    ValueError
        If ``D`` violates the tangent condition ``PD + DP = D`` by more than
        ``tol``.
    """
    Pv, Dv = value_of(P), value_of(D)
    err = np.abs(Pv @ Dv + Dv @ Pv - Dv).max() if Dv.size else 0.0
    if err > tol:
        raise ValueError(f"gr_exp_projector: not a tangent vector at P (error {err:.2e})")
    R = F.mat_exp(commutator(D, P))
    return F.sym(F.matmul(F.matmul(R, P), F.mT(R)))


# identity coordinates

def _zeros(lead, r, c):
    return np.zeros(tuple(lead) + (r, c))


def coords_to_tangent(C):
    """Symmetric tangent ``[[0, C], [Cᵀ, 0]]`` at I_{n,p}."""
    Cv = value_of(C)
    p, q = Cv.shape[-2:]
    lead = Cv.shape[:-2]
    top = F.concatenate([_zeros(lead, p, p), C], axis=-1)
    bot = F.concatenate([F.mT(C), _zeros(lead, q, q)], axis=-1)
    return F.concatenate([top, bot], axis=-2)


def tangent_to_coords(D, p: int):
    """Coordinates ``C`` of a tangent vector at I_{n,p}."""
    return F.getitem(D, (Ellipsis, slice(0, p), slice(p, None)))


def skew_from_coords(C):
    """[Δ, I_{n,p}] = [[0, -C], [Cᵀ, 0]] for Δ with coordinates ``C``."""
    Cv = value_of(C)
    p, q = Cv.shape[-2:]
    lead = Cv.shape[:-2]
    top = F.concatenate([_zeros(lead, p, p), F.neg(C)], axis=-1)
    bot = F.concatenate([F.mT(C), _zeros(lead, q, q)], axis=-1)
    return F.concatenate([top, bot], axis=-2)


def gr_log_id(U):
    """Coordinates of Log at the identity for frames ``U`` (..., n, p).

    Equivalent to ``tangent_to_coords(gr_log_projector(I_{n,p}, UUᵀ))`` but
    uses the block structure of Ĩ_{n,p}.
    """
    Uv = value_of(U)
    p = Uv.shape[-1]
    U1 = F.getitem(U, (Ellipsis, slice(0, p), slice(None)))
    U2 = F.getitem(U, (Ellipsis, slice(p, None), slice(None)))
    _check_cut(U1, "gr_log_id")
    A2 = F.matmul(U2, F.inv(U1))
    L2 = F.matmul(A2, F.atan_ratio_fn(F.matmul(F.mT(A2), A2)))
    return F.mT(L2)


def gr_exp_id_onb(C):
    """Frame ``exp([Δ, I_{n,p}]) Ĩ_{n,p}`` of Exp at the identity."""
    Cv = value_of(C)
    p, q = Cv.shape[-2:]
    R = F.mat_exp(skew_from_coords(C))
    return F.getitem(R, (Ellipsis, slice(None), slice(0, p)))


def gr_exp_id(C):
    """Projector Exp_{I_{n,p}} of the tangent with coordinates ``C``."""
    return tau(gr_exp_id_onb(C))


def _proj_coords(P):
    Pv = value_of(P)
    p = int(round(float(np.trace(Pv.reshape((-1,) + Pv.shape[-2:])[0]))))
    return gr_log_id(tau_inv(P, p)), p


def gr_add(P, Q):
    """P ⊕ Q = exp([Log_I P, I_{n,p}]) Q exp(-[Log_I P, I_{n,p}])."""
    C, _ = _proj_coords(P)
    R = F.mat_exp(skew_from_coords(C))
    return F.sym(F.matmul(F.matmul(R, Q), F.mT(R)))


def gr_inv(P):
    """⊖P = Exp_I(-Log_I P)."""
    C, _ = _proj_coords(P)
    return gr_exp_id(F.neg(C))


def gr_add_onb(U, V):
    """U ⊕̃ V = exp([Log_I(UUᵀ), I_{n,p}]) V."""
    R = F.mat_exp(skew_from_coords(gr_log_id(U)))
    return F.matmul(R, V)


def gr_inv_onb(U):
    """⊖̃U = exp(-[Log_I(UUᵀ), I_{n,p}]) Ĩ_{n,p}, a frame of ⊖(UUᵀ)."""
    return gr_exp_id_onb(F.neg(gr_log_id(U)))


def gr_inner_tangent(D1, D2):
    """Canonical metric Tr(D1 D2) / 2 of tangent vectors."""
    return F.mul(F.inner(D1, D2), 0.5)


def gr_inner(P, Q):
    """Grassmann inner product <Log_I P, Log_I Q>."""
    CP, _ = _proj_coords(P)
    CQ, _ = _proj_coords(Q)
    return F.inner(CP, CQ)


def gr_gyrotranslate(M, X):
    """Left gyrotranslation φ_M(X) = exp([Log_I M, I]) X exp(-[Log_I M, I])."""
    return gr_add(M, X)


def gr_nonlinearity(X):
    """σ(X) = VVᵀ from the QR factor V of exp([Log_I X, I_{n,p}]) Ĩ_{n,p}."""
    C, _ = _proj_coords(X)
    V, _ = F.qr_thin(gr_exp_id_onb(C))
    return tau(V)


def gr_nonlinearity_onb(X):
    """σ(X) = V from the QR decomposition X = V R."""
    V, _ = F.qr_thin(X)
    return V


def _skew_B(B):
    return skew_from_coords(F.neg(B))


def skew_param_onb(B):
    """Frame ``exp([[0, B], [-Bᵀ, 0]]) Ĩ_{n,p}`` for ``B`` of shape (..., p, n-p)."""
    return gr_exp_id_onb(F.neg(B))


def skew_param(B):
    """Projector ``exp(K) I_{n,p} exp(-K)`` with ``K = [[0, B], [-Bᵀ, 0]]``."""
    return tau(skew_param_onb(B))


# Fréchet mean and geodesics (numpy only)

def gr_geodesic(U, V, gamma: float) -> np.ndarray:
    """Point ``Exp_U(gamma Log_U V)`` on the geodesic from ``U`` to ``V``."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must be in [0, 1], got {gamma}")
    U, V = value_of(U), value_of(V)
    if gamma == 0.0:
        return U.copy()
    return gr_exp_onb(U, gamma * value_of(gr_log_onb(U, V)))


def gr_mean(Us, tol: float = 1e-9, max_iter: int = 100, init=None) -> np.ndarray:
    """Karcher mean of frames in the ONB perspective.

    Fixed-point iteration ``M <- Exp_M(mean_i Log_M(U_i))`` with step 1.

    Parameters
    ----------
    Us : ndarray, shape (N, n, p)
    tol : float, default=1e-9
        Bound on the Frobenius norm of the mean tangent at convergence.
    max_iter : int, default=100
    init : ndarray, shape (n, p), optional
        Starting estimate; the first frame by default.  The running common
        subspace of the structure-space head is passed here.

    Raises
    ------
    ConvergenceError
        If the mean tangent norm stays above ``tol`` after ``max_iter`` steps.
    """
    Us = value_of(Us)
    if Us.ndim != 3 or len(Us) == 0:
        raise ValueError("gr_mean expects a nonempty stack of frames (N, n, p)")
    M = Us[0].copy() if init is None else value_of(init).copy()
    res = np.inf
    for _ in range(max_iter):
        T = value_of(gr_log_onb(M[None], Us)).mean(axis=0)
        res = float(np.linalg.norm(T))
        if res < tol:
            return M
        M = gr_exp_onb(M, T)
    raise ConvergenceError(f"gr_mean did not converge in {max_iter} iterations "
                           f"(residual {res:.2e})", residual=res)
