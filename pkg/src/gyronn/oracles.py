"""Sampling oracles for pseudo-gyrodistances.

The pseudo-gyrodistance from ``X`` to a hypergyroplane through ``P`` is the
infimum over on-plane points ``Q`` of ``sin(angle XPQ) * d(X, P)``.  These
routines approximate that infimum by sampling points ``Q = P ⊕ Exp_I(b)``
with ``b`` orthogonal to the normal and evaluating angle and distance with
the gyro operations only.  The returned value is an upper bound of the
infimum.
"""
from __future__ import annotations

import numpy as np

from . import grassmann as gr
from . import spd
from .autodiff.core import value_of
from .spsd import SpsdConfig, SpsdHyperplane, StructurePoint, psd_norm, psd_sub_coords

__all__ = ["spd_sampling_pseudo_gyrodistance", "psd_sampling_pseudo_gyrodistance"]


def _directions(rng, x_perp, noise, n_samples):
    """Mix of perturbed copies of ``x_perp`` and pure random directions."""
    k = n_samples // 2
    eps = 10.0 ** rng.uniform(-6, 1, size=k)
    xn = np.sqrt(np.sum(x_perp ** 2)) or 1.0
    nn = np.sqrt(np.sum(noise[:k] ** 2, axis=tuple(range(1, noise.ndim)), keepdims=True))
    near = x_perp[None] + (eps.reshape((-1,) + (1,) * x_perp.ndim) * xn) * noise[:k] / nn
    return np.concatenate([near, noise[k:]], axis=0)


def _ortho(metric_inner, v, a):
    """Remove the component of ``v`` along ``a``."""
    return v - (metric_inner(v, a) / metric_inner(a, a)).reshape((-1,) + (1,) * (a.ndim)) * a


def spd_sampling_pseudo_gyrodistance(metric, X, H: spd.SpdHyperplane, n_samples: int = 100_000,
                                     rng=None) -> float:
    """Sampled approximation of the SPD pseudo-gyrodistance.

    Parameters
    ----------
    metric : str or SpdMetric
    X : ndarray, shape (n, n)
    H : SpdHyperplane
    n_samples : int
    rng : numpy.random.Generator, optional

    Returns
    -------
    float
    """
    metric = spd.as_metric(metric)
    rng = np.random.default_rng(0) if rng is None else rng
    P = value_of(H.P)
    n = P.shape[-1]
    a = value_of(H.normal_coords(metric))
    x = value_of(spd.spd_coords(metric, spd.spd_sub(metric, P, X)))

    def ip(u, v):
        return np.asarray(value_of(spd.coord_inner(metric, u, v)))

    x_perp = x - ip(x, a) / ip(a, a) * a
    R = rng.normal(size=(n_samples, n, n))
    R = np.tril(R) if metric.name == "lc" else 0.5 * (R + np.swapaxes(R, -1, -2))
    B = _ortho(ip, _directions(rng, x_perp, R, n_samples), a)
    # keep the sampled points in a numerically comfortable range; the
    # angle does not depend on the length of b
    nb = np.sqrt(np.maximum(ip(B, B), 1e-300)).reshape(-1, 1, 1)
    B = B / nb * min(1.0, float(np.sqrt(ip(x, x))) + 0.1)
    Q = spd.spd_add(metric, P, spd.coords_to_spd(metric, B))
    q = value_of(spd.spd_coords(metric, spd.spd_sub(metric, P, Q)))
    cos = ip(q, x) / np.sqrt(ip(q, q) * ip(x, x))
    sin = np.sqrt(np.clip(1.0 - cos ** 2, 0.0, 1.0))
    d = float(value_of(spd.spd_gyrodistance(metric, X, P)))
    return float(np.min(sin) * d)


def psd_sampling_pseudo_gyrodistance(cfg: SpsdConfig, X: StructurePoint, H: SpsdHyperplane,
                                     n_samples: int = 100_000, rng=None) -> float:
    """Sampled approximation of the structure-space pseudo-gyrodistance."""
    rng = np.random.default_rng(0) if rng is None else rng
    met = cfg.spd_metric
    P = StructurePoint(value_of(H.U_P), value_of(H.S_P))
    p, q_ = value_of(H.C_W).shape
    Cx, cx = (value_of(t) for t in psd_sub_coords(cfg, P, X))
    aW = value_of(spd.tangent_to_coords(met, H.A_W))
    CW = value_of(H.C_W)
    x = np.concatenate([Cx.ravel(), cx.ravel()])
    a = np.concatenate([CW.ravel(), aW.ravel()])
    k = Cx.size

    def ip(u, v):
        u2, v2 = np.atleast_2d(u), np.atleast_2d(v)
        g = cfg.lam * np.sum(u2[:, :k] * v2[:, :k], axis=1)
        cu = u2[:, k:].reshape(-1, p, p)
        cv = v2[:, k:].reshape(-1, p, p)
        s = np.asarray(value_of(spd.coord_inner(met, cu, cv)))
        return g + s

    x_perp = x - ip(x, a)[0] / ip(a, a)[0] * a
    Rg = rng.normal(size=(n_samples, k))
    Rs = rng.normal(size=(n_samples, p, p))
    Rs = np.tril(Rs) if met.name == "lc" else 0.5 * (Rs + np.swapaxes(Rs, -1, -2))
    R = np.concatenate([Rg, Rs.reshape(n_samples, -1)], axis=1)
    D = _directions(rng, x_perp, R, n_samples)
    B = D - (ip(D, a[None]) / ip(a, a))[:, None] * a[None]
    # scale so that the Grassmann part stays well inside the injectivity radius
    Cb = B[:, :k].reshape(-1, p, q_)
    spec = np.linalg.norm(Cb, ord=2, axis=(-2, -1))
    scale = np.minimum(1.0, 1.0 / np.maximum(spec, 1e-300))
    B = B * scale[:, None]
    Cb = B[:, :k].reshape(-1, p, q_)
    cb = B[:, k:].reshape(-1, p, p)
    Qu = value_of(gr.gr_add_onb(P.U, gr.gr_exp_id_onb(Cb)))
    Qs = value_of(spd.spd_add(met, P.S, spd.coords_to_spd(met, cb)))
    Cq, cq = (value_of(t) for t in psd_sub_coords(cfg, P, StructurePoint(Qu, Qs)))
    qv = np.concatenate([Cq.reshape(n_samples, -1), cq.reshape(n_samples, -1)], axis=1)
    cos = ip(qv, x[None]) / np.sqrt(ip(qv, qv) * ip(x, x)[0])
    sin = np.sqrt(np.clip(1.0 - cos ** 2, 0.0, 1.0))
    # gyrodistance d(X, P) = ||⊖X ⊕ P||
    Cd, cd = psd_sub_coords(cfg, X, P)
    d = float(np.sqrt(cfg.lam * np.sum(value_of(Cd) ** 2)
                      + value_of(spd.coord_inner(met, cd, cd))))
    return float(np.min(sin) * d)
