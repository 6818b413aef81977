"""Input validation for matrix manifold points."""
from __future__ import annotations

import numpy as np

from .autodiff.core import Tensor, value_of
from .exceptions import DomainError, GyroError

__all__ = ["check_matrix", "check_square", "check_sym", "check_spd", "check_onb",
           "check_projector", "check_same_shape", "ManifoldTypeError"]


class ManifoldTypeError(GyroError, ValueError):
    """A value violates the invariants of its manifold type."""


def check_matrix(X, name="X", ndim_min=2):
    """Return ``X`` as a finite float64 array with at least ``ndim_min`` dims.

    Tensors are passed through untouched after a finiteness check.
    """
    v = value_of(X)
    if v.ndim < ndim_min:
        raise ValueError(f"{name} must have at least {ndim_min} dimensions, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains NaN or Inf")
    return X if isinstance(X, Tensor) else v


def check_square(X, name="X"):
    X = check_matrix(X, name)
    s = value_of(X).shape
    if s[-1] != s[-2]:
        raise ValueError(f"{name} must be square, got shape {s}")
    return X


def check_sym(X, name="X", tol=1e-12):
    """Check symmetry up to ``tol * max(1, ||X||_F)`` and return the symmetric part."""
    X = check_square(X, name)
    if isinstance(X, Tensor):
        return X
    asym = np.linalg.norm(X - np.swapaxes(X, -1, -2), axis=(-2, -1))
    scale = np.maximum(1.0, np.linalg.norm(X, axis=(-2, -1)))
    if np.any(asym > tol * scale * 1e3):
        raise ManifoldTypeError(f"{name} is not symmetric (asymmetry {asym.max():.2e})")
    return 0.5 * (X + np.swapaxes(X, -1, -2))


def check_spd(X, name="P"):
    """Check that ``X`` is symmetric positive definite."""
    X = check_sym(X, name)
    v = value_of(X)
    lam = np.linalg.eigvalsh(v)
    top = np.max(np.abs(lam), axis=-1, keepdims=True)
    if np.any(lam[..., :1] <= 1e-12 * top):
        bad = float(lam[..., 0].min())
        raise DomainError(f"{name} is not positive definite (smallest eigenvalue {bad:.3e})",
                          eigenvalue=bad)
    return X


def check_onb(U, name="U", tol=1e-8):
    """Check that ``U`` has orthonormal columns."""
    U = check_matrix(U, name)
    v = value_of(U)
    n, p = v.shape[-2:]
    if p > n:
        raise ValueError(f"{name} must have at least as many rows as columns, got {v.shape}")
    err = np.linalg.norm(np.swapaxes(v, -1, -2) @ v - np.eye(p), axis=(-2, -1))
    if np.any(err > tol):
        raise ManifoldTypeError(f"{name} does not have orthonormal columns (error {err.max():.2e})")
    return U


def check_projector(P, name="P", tol=1e-8):
    """Check that ``P`` is a symmetric idempotent matrix."""
    P = check_sym(P, name, tol=1e-9)
    v = value_of(P)
    err = np.linalg.norm(v @ v - v, axis=(-2, -1))
    if np.any(err > tol):
        raise ManifoldTypeError(f"{name} is not idempotent (error {err.max():.2e})")
    return P


def check_same_shape(A, B, names=("P", "Q")):
    sa, sb = value_of(A).shape[-2:], value_of(B).shape[-2:]
    if sa != sb:
        raise ValueError(f"size mismatch: {names[0]} is {sa}, {names[1]} is {sb}")
