"""Dense matrix kernels and matrix functions.

All routines act on the last two axes and broadcast over leading ones.  They
accept plain arrays or autodiff Tensors; see :mod:`gyronn.autodiff`.
"""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
import scipy.linalg

from .autodiff import functions as F
from .autodiff.core import Tensor, value_of
from .exceptions import (ConvergenceError, CutLocusError, ParseError,
                         UnsupportedOpError)
from .validation import check_matrix, check_spd, check_square, check_sym

__all__ = ["sym_eig", "spd_fn", "cholesky", "qr_thin", "svd_thin", "mat_exp",
           "mat_log_orthogonal", "concat_spd", "lower_strict", "diag_part", "sym",
           "read_matrix_csv", "write_matrix_csv"]


def sym(X):
    """Symmetric part (X + Xᵀ)/2."""
    return F.sym(X)


def sym_eig(S):
    """Eigen-decomposition of a symmetric matrix.

    Parameters
    ----------
    S : array_like, shape (..., n, n)

    Returns
    -------
    Q : ndarray, shape (..., n, n)
        Orthogonal eigenvectors; the largest-magnitude entry of every column
        is positive.
    lam : ndarray, shape (..., n)
        Eigenvalues in descending order.
    """
    S = check_sym(S, "S")
    try:
        lam, Q = F.eigh(S)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError(f"sym_eig did not converge: {exc}") from None
    return Q, lam


def spd_fn(P, f: str):
    """Apply ``f`` in {exp, log, sqrt, invsqrt} through the eigenvalues of ``P``.

    Raises
    ------
    DomainError
        For log/sqrt/invsqrt when an eigenvalue is not positive.
    """
    P = check_sym(P, "P")
    return F.spd_fn(P, f)


def cholesky(P):
    """Lower-triangular ``L`` with ``L Lᵀ = P`` and positive diagonal.

    Raises
    ------
    NotPositiveDefiniteError
        Carries the index of the failing pivot.
    """
    P = check_sym(P, "P")
    return F.cholesky(P)


def qr_thin(X):
    """Thin QR decomposition ``X = V R`` with ``diag(R) >= 0``.

    Raises
    ------
    RankError
        If ``|R_ii| < 1e-12 ||X||_2`` for some ``i``.
    """
    X = check_matrix(X, "X")
    n, p = value_of(X).shape[-2:]
    if n < p:
        raise ValueError(f"qr_thin needs n >= p, got {n}x{p}")
    return F.qr_thin(X)


def svd_thin(X):
    """Thin SVD ``X = U diag(sigma) Vᵀ`` with descending singular values."""
    X = check_matrix(X, "X")
    try:
        return F.svd_thin(X)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError(f"svd_thin did not converge: {exc}") from None


def mat_exp(A):
    """Matrix exponential by scaling and squaring (differentiable)."""
    A = check_square(A, "A")
    return F.mat_exp(A)


def mat_log_orthogonal(O, tol: float = 1e-8):
    """Principal logarithm of a rotation matrix.

    Verification-only routine; it cannot be recorded on the tape.

    Parameters
    ----------
    O : array_like, shape (n, n)
        Orthogonal with positive determinant.
    tol : float
        Tolerance for orthogonality and for the distance of an eigenvalue
        to -1.

    Returns
    -------
    Omega : ndarray, shape (n, n)
        Skew-symmetric with ``mat_exp(Omega) = O``.

    Raises
    ------
    CutLocusError
        If ``O`` has an eigenvalue within ``tol`` of -1.
    """
    if isinstance(O, Tensor):
        raise UnsupportedOpError("mat_log_orthogonal is an oracle-only routine")
    O = check_square(O, "O")
    if O.ndim > 2:
        return np.stack([mat_log_orthogonal(o, tol) for o in O.reshape((-1,) + O.shape[-2:])]
                        ).reshape(O.shape)
    n = O.shape[0]
    if np.linalg.norm(O.T @ O - np.eye(n)) > tol * max(1.0, np.sqrt(n)):
        raise ValueError("mat_log_orthogonal: input is not orthogonal")
    if np.linalg.det(O) <= 0:
        raise ValueError("mat_log_orthogonal: determinant must be positive")
    w = np.linalg.eigvals(O)
    if np.any(np.abs(w + 1.0) < tol):
        raise CutLocusError("mat_log_orthogonal: eigenvalue at -1 (angle pi)")
    L = scipy.linalg.logm(O)
    L = np.real(L)
    return 0.5 * (L - L.T)


def concat_spd(Ps):
    """Block-diagonal matrix of SPD blocks in argument order."""
    if not isinstance(Ps, (list, tuple)) or len(Ps) == 0:
        raise ValueError("concat_spd needs a nonempty list of matrices")
    return F.block_diag([check_square(P, f"Ps[{i}]") for i, P in enumerate(Ps)])


def lower_strict(Y):
    """⌊Y⌋: entries strictly below the diagonal."""
    return F.lower_strict(check_square(Y, "Y"))


def diag_part(Y):
    """𝔻(Y): diagonal entries of Y as a diagonal matrix."""
    return F.diag_part(check_square(Y, "Y"))


def read_matrix_csv(path) -> np.ndarray:
    """Read a matrix from CSV (no header, '.' decimals).

    Raises
    ------
    ParseError
        On ragged rows or non-numeric fields, with the line number.
    """
    rows = []
    width = None
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                vals = [float(c) for c in row]
            except ValueError:
                raise ParseError(f"non-numeric field in {path}", line=lineno) from None
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise ParseError(f"ragged row in {path}: expected {width} fields, got {len(vals)}",
                                 line=lineno)
            if not all(np.isfinite(vals)):
                raise ParseError(f"non-finite value in {path}", line=lineno)
            rows.append(vals)
    if not rows:
        return np.zeros((0, 0))
    return np.array(rows, dtype=np.float64)


def write_matrix_csv(path, X) -> None:
    """Write a 2-D array as CSV with round-trip precision."""
    X = np.atleast_2d(np.asarray(value_of(X), dtype=np.float64))
    if X.ndim != 2:
        raise ValueError(f"write_matrix_csv expects a 2-D array, got shape {X.shape}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        for row in X:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
