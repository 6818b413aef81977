"""Classification losses."""
from __future__ import annotations

import numpy as np

from ..autodiff import functions as F
from ..autodiff.core import value_of


def cross_entropy(logits, labels):
    """Mean cross-entropy of integer labels under softmax(logits).

    Parameters
    ----------
    logits : array_like, shape (N, C) or (C,)
    labels : array_like of int, shape (N,) or scalar

    Raises
    ------
    ValueError
        If a label is outside ``[0, C)``.
    """
    lv = value_of(logits)
    single = lv.ndim == 1
    if single:
        logits = F.reshape(logits, (1, -1))
        lv = lv.reshape(1, -1)
    labels = np.atleast_1d(np.asarray(labels))
    C = lv.shape[-1]
    if labels.shape[0] != lv.shape[0]:
        raise ValueError(f"{labels.shape[0]} labels for {lv.shape[0]} rows of logits")
    if np.any(labels < 0) or np.any(labels >= C) or not np.issubdtype(labels.dtype, np.integer):
        raise ValueError(f"labels must be integers in [0, {C})")
    picked = F.getitem(logits, (np.arange(lv.shape[0]), labels))
    loss = F.sub(F.logsumexp(logits, axis=-1), picked)
    return F.div(F.sum(loss), float(lv.shape[0]))


def softmax(logits) -> np.ndarray:
    z = value_of(logits)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)
