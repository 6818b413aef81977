"""Finite-difference verification of tape gradients."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..exceptions import EvaluationError
from .core import Tensor, grad, value_of


def _scalar(out) -> float:
    v = float(np.asarray(value_of(out)).reshape(()))
    if not np.isfinite(v):
        raise EvaluationError(f"function returned non-finite value {v}")
    return v


def gradcheck(f: Callable, inputs: Sequence, return_details: bool = False):
    """Compare tape gradients with central finite differences.

    Parameters
    ----------
    f : callable
        Maps a list of Tensors (or arrays) to a scalar.
    inputs : sequence of array_like
        Point at which to check.
    return_details : bool, default=False
        Also return the analytic and numeric gradients.

    Returns
    -------
    max_rel_err : float
        ``max |fd - an| / max(1, |an|)`` over all input entries, with step
        ``h = 1e-5 * max(1, |x|)``.
    """
    xs = [np.array(value_of(x), dtype=np.float64, order="C") for x in inputs]
    leaves = [Tensor(x.copy()) for x in xs]
    out = f(leaves)
    _scalar(out)
    analytic = grad(out, leaves)
    numeric = []
    err = 0.0
    for i, x in enumerate(xs):
        num = np.zeros_like(x)
        flat = x.reshape(-1)
        for j in range(flat.size):
            h = 1e-5 * max(1.0, abs(flat[j]))
            args_p = [y.copy() for y in xs]
            args_m = [y.copy() for y in xs]
            args_p[i].reshape(-1)[j] += h
            args_m[i].reshape(-1)[j] -= h
            fp, fm = _scalar(f(args_p)), _scalar(f(args_m))
            num.reshape(-1)[j] = (fp - fm) / (2 * h)
        an = analytic[i]
        if num.size:
            err = max(err, float(np.max(np.abs(num - an) / np.maximum(1.0, np.abs(an)))))
        numeric.append(num)
    if return_details:
        return err, analytic, numeric
    return err
