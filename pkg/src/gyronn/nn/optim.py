"""Optimizers operating in place on dictionaries of parameter arrays."""
from __future__ import annotations

import numpy as np


class Adam:
    """Adam optimizer.

    Parameters
    ----------
    params : dict of str -> ndarray
        Parameter arrays, updated in place by :meth:`step`.
    lr : float, default=1e-3
    betas : tuple of float, default=(0.9, 0.999)
    eps : float, default=1e-8
    """

    def __init__(self, params: dict, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        if lr <= 0:
            raise ValueError(f"lr must be positive, got {lr}")
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, g in grads.items():
            m = self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            v = self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            self.params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def adam_step(params: dict, grads: dict, state: Adam | None = None, lr: float = 1e-3,
              betas=(0.9, 0.999), eps: float = 1e-8) -> Adam:
    """Functional wrapper: apply one Adam step and return the optimizer state."""
    if state is None:
        state = Adam(params, lr=lr, betas=betas, eps=eps)
    state.step(grads)
    return state
