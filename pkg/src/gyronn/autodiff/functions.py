"""Differentiable matrix primitives.

Every function accepts Tensors or array-likes.  Without Tensor arguments the
plain numpy result is returned; otherwise a graph node is recorded.  Matrix
functions act on the last two axes and broadcast over leading ones.
"""
from __future__ import annotations

import numpy as np

from ..exceptions import (ConditioningError, DomainError, NotPositiveDefiniteError,
                          RankError)
from .core import Tensor, register_op, value_of

_DEGEN = 1e-9


def _any(*xs):
    return any(isinstance(x, Tensor) for x in xs)


def _node(op, value, parents, vjp):
    return Tensor(value, op=op, parents=tuple(parents), vjp=vjp)


def _unb(g, shape):
    """Sum a broadcast cotangent back to ``shape``."""
    g = np.asarray(g)
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _T(a):
    return np.swapaxes(a, -1, -2)


def _sym(a):
    return 0.5 * (a + _T(a))


# elementwise arithmetic

def add(a, b):
    av, bv = value_of(a), value_of(b)
    out = av + bv
    if not _any(a, b):
        return out
    return _node("add", out, (a, b), lambda g: (_unb(g, av.shape), _unb(g, bv.shape)))


def sub(a, b):
    av, bv = value_of(a), value_of(b)
    out = av - bv
    if not _any(a, b):
        return out
    return _node("sub", out, (a, b), lambda g: (_unb(g, av.shape), _unb(-g, bv.shape)))


def mul(a, b):
    av, bv = value_of(a), value_of(b)
    out = av * bv
    if not _any(a, b):
        return out
    return _node("mul", out, (a, b),
                 lambda g: (_unb(g * bv, av.shape), _unb(g * av, bv.shape)))


def div(a, b):
    av, bv = value_of(a), value_of(b)
    out = av / bv
    if not _any(a, b):
        return out
    return _node("div", out, (a, b),
                 lambda g: (_unb(g / bv, av.shape), _unb(-g * out / bv, bv.shape)))


def neg(a):
    av = value_of(a)
    if not _any(a):
        return -av
    return _node("neg", -av, (a,), lambda g: (-g,))


def power(a, k: float):
    av = value_of(a)
    out = av ** k
    if not _any(a):
        return out
    return _node("power", out, (a,), lambda g: (g * k * av ** (k - 1),))


def _unary(name, f, df):
    def op(a):
        av = value_of(a)
        out = f(av)
        if not _any(a):
            return out
        return _node(name, out, (a,), lambda g: (g * df(av, out),))
    op.__name__ = name
    op.__doc__ = f"Elementwise {name}."
    return op


exp = _unary("exp", np.exp, lambda x, y: y)
log = _unary("log", np.log, lambda x, y: 1.0 / x)
sqrt = _unary("sqrt", np.sqrt, lambda x, y: 0.5 / y)
abs = _unary("abs", np.abs, lambda x, y: np.sign(x))  # noqa: A001
sin = _unary("sin", np.sin, lambda x, y: np.cos(x))
cos = _unary("cos", np.cos, lambda x, y: -np.sin(x))
tanh = _unary("tanh", np.tanh, lambda x, y: 1.0 - y * y)
arctan = _unary("arctan", np.arctan, lambda x, y: 1.0 / (1.0 + x * x))


# linear algebra plumbing

def matmul(a, b):
    av, bv = value_of(a), value_of(b)
    out = av @ bv
    if not _any(a, b):
        return out

    def vjp(g):
        ga = _unb(g @ _T(bv), av.shape) if isinstance(a, Tensor) else None
        gb = _unb(_T(av) @ g, bv.shape) if isinstance(b, Tensor) else None
        return ga, gb
    return _node("matmul", out, (a, b), vjp)


def mT(a):
    """Transpose of the last two axes."""
    av = value_of(a)
    if not _any(a):
        return _T(av)
    return _node("transpose", _T(av), (a,), lambda g: (_T(g),))


transpose = mT


def sym(a):
    """Symmetric part (A + Aᵀ)/2."""
    return mul(add(a, mT(a)), 0.5)


def sum(a, axis=None, keepdims=False):  # noqa: A001
    av = value_of(a)
    out = av.sum(axis=axis, keepdims=keepdims)
    if not _any(a):
        return out

    def vjp(g):
        if axis is not None and not keepdims:
            axes = (axis,) if np.isscalar(axis) else tuple(axis)
            axes = tuple(ax % av.ndim for ax in axes)
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, av.shape),)
    return _node("sum", out, (a,), vjp)


def reshape(a, shape):
    av = value_of(a)
    out = av.reshape(shape)
    if not _any(a):
        return out
    return _node("reshape", out, (a,), lambda g: (np.reshape(g, av.shape),))


def getitem(a, idx):
    av = value_of(a)
    out = av[idx]
    if not _any(a):
        return out

    def vjp(g):
        z = np.zeros_like(av)
        np.add.at(z, idx, g)
        return (z,)
    return _node("getitem", out, (a,), vjp)


def stack(xs, axis=0):
    vals = [value_of(x) for x in xs]
    out = np.stack(vals, axis=axis)
    if not _any(*xs):
        return out

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(vals)))
    return _node("stack", out, xs, vjp)


def concatenate(xs, axis=0):
    vals = [value_of(x) for x in xs]
    out = np.concatenate(vals, axis=axis)
    if not _any(*xs):
        return out
    cuts = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def vjp(g):
        return tuple(np.split(g, cuts, axis=axis))
    return _node("concatenate", out, xs, vjp)


def diagonal(a):
    """Diagonal of the last two axes as a vector."""
    av = value_of(a)
    out = np.diagonal(av, axis1=-2, axis2=-1).copy()
    if not _any(a):
        return out
    return _node("diagonal", out, (a,), lambda g: (_diag_embed(g),))


def _diag_embed(v):
    n = v.shape[-1]
    out = np.zeros(v.shape + (n,))
    idx = np.arange(n)
    out[..., idx, idx] = v
    return out


def diag_embed(v):
    """Diagonal matrices from vectors along the last axis."""
    vv = value_of(v)
    out = _diag_embed(vv)
    if not _any(v):
        return out
    return _node("diag_embed", out, (v,),
                 lambda g: (np.diagonal(g, axis1=-2, axis2=-1).copy(),))


def tril(a, k=0):
    av = value_of(a)
    mask = np.tri(av.shape[-2], av.shape[-1], k=k)
    out = av * mask
    if not _any(a):
        return out
    return _node("tril", out, (a,), lambda g: (g * mask,))


def lower_strict(a):
    """⌊A⌋: entries strictly below the diagonal."""
    return tril(a, -1)


def diag_part(a):
    """𝔻(A): the diagonal of A as a diagonal matrix."""
    return diag_embed(diagonal(a))


def trace(a):
    return sum(diagonal(a), axis=-1)


def inner(a, b):
    """Frobenius inner product over the last two axes."""
    return sum(mul(a, b), axis=(-2, -1))


def frob_norm(a):
    return sqrt(inner(a, a))


def inv(a):
    av = value_of(a)
    out = np.linalg.inv(av)
    if not _any(a):
        return out
    return _node("inv", out, (a,), lambda g: (-_T(out) @ g @ _T(out),))


def block_diag(xs):
    """Block-diagonal arrangement of square matrices (batched)."""
    vals = [value_of(x) for x in xs]
    sizes = [v.shape[-1] for v in vals]
    batch = np.broadcast_shapes(*[v.shape[:-2] for v in vals])
    N = int(np.sum(sizes))
    out = np.zeros(batch + (N, N))
    offs = np.concatenate([[0], np.cumsum(sizes)])
    for v, o, s in zip(vals, offs, sizes):
        out[..., o:o + s, o:o + s] = v
    if not _any(*xs):
        return out

    def vjp(g):
        return tuple(_unb(g[..., o:o + s, o:o + s], v.shape)
                     for v, o, s in zip(vals, offs, sizes))
    return _node("block_diag", out, xs, vjp)


def logsumexp(a, axis=-1):
    """Numerically shifted log-sum-exp along ``axis``."""
    av = value_of(a)
    m = np.max(av, axis=axis, keepdims=True)
    s = sum(exp(sub(a, m)), axis=axis, keepdims=True)
    out = add(log(s), m)
    return sum(out, axis=axis)


# spectral functions

def _eigh_desc(S):
    lam, Q = np.linalg.eigh(S)
    lam = lam[..., ::-1]
    Q = Q[..., ::-1]
    # largest-magnitude entry of each column is made positive
    idx = np.argmax(np.abs(Q), axis=-2)[..., None, :]
    sgn = np.sign(np.take_along_axis(Q, idx, axis=-2))
    sgn[sgn == 0] = 1.0
    return np.ascontiguousarray(lam), np.ascontiguousarray(Q * sgn)


def _close(li, lj):
    scale = np.maximum(1.0, np.maximum(np.abs(li), np.abs(lj)))
    return np.abs(li - lj) < _DEGEN * scale


def divided_differences(lam, f, df):
    """First divided-difference (Loewner) matrix of ``f`` over eigenvalues."""
    li, lj = lam[..., :, None], lam[..., None, :]
    fl = f(lam)
    fi, fj = fl[..., :, None], fl[..., None, :]
    close = _close(li, lj)
    diff = np.where(close, 1.0, li - lj)
    return np.where(close, df(0.5 * (li + lj)), (fi - fj) / diff)


def sym_fn(S, f, df, name="sym_fn", domain=None):
    """Spectral function of a symmetric matrix, f(S) = Q f(Λ) Qᵀ.

    The input is symmetrized first.  The adjoint uses the Daleckii–Krein
    formula with the divided-difference matrix of ``f``.

    Parameters
    ----------
    S : Tensor or ndarray, shape (..., n, n)
    f, df : callable
        Scalar function and its derivative, vectorized.
    domain : {None, "positive", "nonnegative"}
        Eigenvalue domain enforced before evaluating ``f``.
    """
    Sv = _sym(value_of(S))
    lam, Q = np.linalg.eigh(Sv)
    if domain == "positive" and np.any(lam <= 0):
        bad = float(lam[lam <= 0].min())
        raise DomainError(f"{name}: non-positive eigenvalue {bad:.3e}", eigenvalue=bad)
    if domain == "nonnegative":
        lam = np.maximum(lam, 0.0)
    out = (Q * f(lam)[..., None, :]) @ _T(Q)
    if not _any(S):
        return out

    def vjp(g):
        D = divided_differences(lam, f, df)
        K = _T(Q) @ _sym(g) @ Q
        return (Q @ (D * K) @ _T(Q),)
    return _node(name, out, (S,), vjp)


_SPD_FNS = {
    "exp": (np.exp, np.exp, None),
    "log": (np.log, lambda x: 1.0 / x, "positive"),
    "sqrt": (np.sqrt, lambda x: 0.5 / np.sqrt(x), "positive"),
    "invsqrt": (lambda x: x ** -0.5, lambda x: -0.5 * x ** -1.5, "positive"),
}


def spd_fn(S, tag: str):
    """Matrix exp/log/sqrt/invsqrt of a symmetric (SPD) matrix."""
    try:
        f, df, dom = _SPD_FNS[tag]
    except KeyError:
        raise ValueError(f"unknown spectral function {tag!r}; expected one of "
                         f"{sorted(_SPD_FNS)}") from None
    return sym_fn(S, f, df, name=f"spd_{tag}", domain=dom)


def sym_exp(S):
    return spd_fn(S, "exp")


def sym_log(S):
    return spd_fn(S, "log")


def sym_sqrt(S):
    return spd_fn(S, "sqrt")


def sym_invsqrt(S):
    return spd_fn(S, "invsqrt")


def _atan_ratio(s):
    """h(s) = arctan(√s)/√s for s ≥ 0, with its series near 0."""
    s = np.asarray(s, dtype=float)
    small = s < 1e-3
    ss = np.where(small, 0.0, s)
    r = np.sqrt(ss)
    with np.errstate(divide="ignore", invalid="ignore"):
        big = np.where(small, 1.0, np.arctan(r) / np.where(small, 1.0, r))
    ser = 1 - s / 3 + s ** 2 / 5 - s ** 3 / 7 + s ** 4 / 9 - s ** 5 / 11
    return np.where(small, ser, big)


def _atan_ratio_d(s):
    s = np.asarray(s, dtype=float)
    small = s < 1e-3
    ss = np.where(small, 1.0, s)
    big = (1.0 / (1.0 + ss) - _atan_ratio(ss)) / (2.0 * ss)
    ser = -1 / 3 + 2 * s / 5 - 3 * s ** 2 / 7 + 4 * s ** 3 / 9 - 5 * s ** 4 / 11 + 6 * s ** 5 / 13
    return np.where(small, ser, big)


def atan_ratio_fn(S):
    """h(S) with h(s) = arctan(√s)/√s, for symmetric PSD S (Gram matrices)."""
    return sym_fn(S, _atan_ratio, _atan_ratio_d, name="atan_ratio", domain="nonnegative")


def eigh(S):
    """Eigen-decomposition with descending eigenvalues.

    Returns ``(lam, Q)`` with the sign convention that the largest-magnitude
    entry of each eigenvector is positive.  Eigenvector cotangents between
    (near) degenerate eigenvalues are dropped; they cancel for any function
    that is invariant under rotations inside an eigenspace.
    """
    Sv = _sym(value_of(S))
    lam, Q = _eigh_desc(Sv)
    if not _any(S):
        return lam, Q

    def vjp_lam(g):
        return (_sym((Q * g[..., None, :]) @ _T(Q)),)

    def vjp_vec(g):
        li, lj = lam[..., :, None], lam[..., None, :]
        close = _close(li, lj)
        F = np.where(close, 0.0, 1.0 / np.where(close, 1.0, lj - li))
        return (_sym(Q @ (F * (_T(Q) @ g)) @ _T(Q)),)
    return (_node("eigvalsh", lam, (S,), vjp_lam),
            _node("eigvecsh", Q, (S,), vjp_vec))


def _chol_pivot(S):
    """Index (batch, pivot) of the first failing Cholesky pivot."""
    flat = S.reshape((-1,) + S.shape[-2:])
    n = S.shape[-1]
    for b, M in enumerate(flat):
        for k in range(1, n + 1):
            try:
                np.linalg.cholesky(M[:k, :k])
            except np.linalg.LinAlgError:
                return b, k - 1
    return 0, n - 1


def cholesky(S):
    """Lower Cholesky factor of the symmetric part of ``S``."""
    Sv = _sym(value_of(S))
    try:
        L = np.linalg.cholesky(Sv)
    except np.linalg.LinAlgError:
        b, k = _chol_pivot(Sv)
        raise NotPositiveDefiniteError(
            f"cholesky: non-positive pivot at index {k} (batch item {b})", pivot=k) from None
    if not _any(S):
        return L

    def vjp(g):
        Phi = np.tril(_T(L) @ g)
        idx = np.arange(L.shape[-1])
        Phi[..., idx, idx] *= 0.5
        Li = np.linalg.inv(L)
        return (_sym(_T(Li) @ Phi @ Li),)
    return _node("cholesky", L, (S,), vjp)


def qr_thin(X):
    """Thin QR with nonnegative diagonal of R.

    Returns
    -------
    Q : (..., n, p) orthonormal columns
    R : (..., p, p) upper triangular
    """
    Xv = value_of(X)
    Q, R = np.linalg.qr(Xv, mode="reduced")
    d = np.sign(np.diagonal(R, axis1=-2, axis2=-1)).copy()
    d[d == 0] = 1.0
    Q = Q * d[..., None, :]
    R = R * d[..., :, None]
    scale = np.linalg.norm(Xv, ord=2, axis=(-2, -1)) if Xv.ndim >= 2 else 1.0
    rd = np.abs(np.diagonal(R, axis1=-2, axis2=-1))
    bad = rd < 1e-12 * np.maximum(np.asarray(scale)[..., None], 1e-300)
    if np.any(bad):
        idx = np.argwhere(bad)[0]
        raise RankError(f"qr_thin: rank-deficient input, |R_ii| ~ 0 at column {idx[-1]}",
                        index=int(idx[-1]))
    if not _any(X):
        return Q, R

    def _grad(dQ, dR):
        qdq = _T(Q) @ dQ
        qdq_ = qdq - _T(qdq)
        rdr = R @ _T(dR)
        rdr_ = rdr - _T(rdr)
        low = np.tril(qdq_ + rdr_)
        Rinv_T = _T(np.linalg.inv(R))
        grad_a = Q @ (dR + low @ Rinv_T)
        grad_b = (dQ - Q @ qdq) @ Rinv_T
        return grad_a + grad_b

    zQ, zR = np.zeros_like(Q), np.zeros_like(R)
    return (_node("qr_q", Q, (X,), lambda g: (_grad(g, zR),)),
            _node("qr_r", R, (X,), lambda g: (_grad(zQ, g),)))


def svd_thin(X):
    """Thin SVD ``X = U diag(s) Vᵀ`` with descending singular values.

    The backward pass raises :class:`ConditioningError` when two singular
    values are closer than 1e-8 (or one is below 1e-8 when the thin factors
    need it), instead of returning huge gradients.
    """
    Xv = value_of(X)
    U, s, Vt = np.linalg.svd(Xv, full_matrices=False)
    V = _T(Vt)
    idx = np.argmax(np.abs(U), axis=-2)[..., None, :]
    sgn = np.sign(np.take_along_axis(U, idx, axis=-2))
    sgn[sgn == 0] = 1.0
    U, V = U * sgn, V * sgn
    if not _any(X):
        return U, s, V

    def _grad(gU, gs, gV):
        si, sj = s[..., :, None], s[..., None, :]
        gap = np.abs(si ** 2 - sj ** 2)
        k = s.shape[-1]
        off = ~np.eye(k, dtype=bool)
        if (gU is not None or gV is not None) and np.any(gap[..., off] < 1e-8):
            raise ConditioningError("svd_thin backward: singular-value gap below 1e-8")
        F = np.where(off, 1.0 / np.where(off, sj ** 2 - si ** 2, 1.0), 0.0)
        S = _diag_embed(s)
        inner_ = np.zeros(s.shape + (k,))
        if gs is not None:
            inner_ = inner_ + _diag_embed(gs)
        extra = 0.0
        m, n = Xv.shape[-2], Xv.shape[-1]
        if gU is not None:
            J = F * (_T(U) @ gU)
            inner_ = inner_ + (J + _T(J)) @ S
            if m > k:
                if np.any(s < 1e-8):
                    raise ConditioningError("svd_thin backward: zero singular value")
                extra = extra + (gU - U @ (_T(U) @ gU)) / s[..., None, :] @ _T(V)
        if gV is not None:
            K = F * (_T(V) @ gV)
            inner_ = inner_ + S @ (K + _T(K))
            if n > k:
                if np.any(s < 1e-8):
                    raise ConditioningError("svd_thin backward: zero singular value")
                extra = extra + U @ _T((gV - V @ (_T(V) @ gV)) / s[..., None, :])
        return U @ inner_ @ _T(V) + extra

    return (_node("svd_u", U, (X,), lambda g: (_grad(g, None, None),)),
            _node("svd_s", s, (X,), lambda g: (_grad(None, g, None),)),
            _node("svd_v", V, (X,), lambda g: (_grad(None, None, g),)))


def mat_exp(A, order: int = 14):
    """Matrix exponential by scaling and squaring with a Taylor core.

    Built from matmul/add/scale only, so it differentiates through the graph
    without a custom adjoint.  The scaling exponent is chosen from the
    largest 1-norm in the batch so that the scaled norm is at most 1/2.
    """
    Av = value_of(A)
    n = Av.shape[-1]
    norm = float(np.max(np.abs(Av).sum(axis=-2))) if Av.size else 0.0
    s = 0 if norm <= 0.5 else int(np.ceil(np.log2(norm / 0.5)))
    B = mul(A, 2.0 ** -s)
    eye = np.eye(n)
    E = add(eye, mul(B, 1.0 / order))
    for k in range(order - 1, 0, -1):
        E = add(eye, mul(matmul(B, E), 1.0 / k))
    for _ in range(s):
        E = matmul(E, E)
    return E


for _name, _fn in {
    "add": add, "sub": sub, "mul": mul, "div": div, "neg": neg, "matmul": matmul,
    "transpose": mT, "trace": trace, "inner": inner, "exp": exp, "log": log,
    "sqrt": sqrt, "sum": sum, "reshape": reshape, "getitem": getitem,
    "stack": stack, "concatenate": concatenate, "diagonal": diagonal,
    "diag_embed": diag_embed, "tril": tril, "spd_fn": spd_fn, "sym_fn": sym_fn,
    "eigh": eigh, "cholesky": cholesky, "qr_thin": qr_thin, "svd_thin": svd_thin,
    "inv": inv, "block_diag": block_diag, "mat_exp": mat_exp,
}.items():
    register_op(_name, _fn)
