"""Property suites and gradient-check targets.

Each property returns ``(residual, tolerance)`` and passes when the residual
is finite and at most the tolerance.  Suites are deterministic given the
seed: every property draws from its own generator
``numpy.random.default_rng([seed, crc32(suite/name)])``.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import grassmann as gr
from . import spd
from .autodiff import functions as F
from .autodiff.core import value_of
from .autodiff.gradcheck import gradcheck
from .nn.layers import (GcnEmbed, GcnHead, GcnLayer, SpdConv, SpdFC, SpdMLR, SpsdMLR,
                        normalized_adjacency)
from .nn.losses import cross_entropy
from .spsd import (CommonSubspaceState, SpsdConfig, SpsdHyperplane, StructurePoint,
                   batch_pseudo_gyrodistances, psd_add, psd_inv, psd_pseudo_gyrodistance,
                   psd_sub_coords, structure_identity)

__all__ = ["CheckResult", "SUITES", "run_suite", "derive_rng", "GRADCHECK_TARGETS",
           "run_gradcheck", "identity_fc_params", "random_subspace_pair",
           "random_spsd_instance"]

METRICS = (spd.AI, spd.LE, spd.LC)


@dataclass(frozen=True)
class CheckResult:
    suite: str
    name: str
    residual: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.residual) and self.residual <= self.tol)


def derive_rng(seed: int, name: str) -> np.random.Generator:
    """Generator for the component ``name`` derived from the root ``seed``."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode("utf-8"))])


def _rel(a, b) -> float:
    a, b = np.asarray(value_of(a)), np.asarray(value_of(b))
    return float(np.max(np.abs(a - b)) / max(1.0, float(np.max(np.abs(b)))))


# generators

def identity_fc_params(metric, m: int):
    """FC parameters ``P = I`` and ``W`` = orthonormal basis, which reproduce the input."""
    B = spd.spd_basis(metric, m)
    return np.broadcast_to(np.eye(m), B.E.shape).copy(), B.E.copy()


def random_subspace_pair(rng: np.random.Generator, n: int, p: int, max_angle: float,
                         size: int = 1):
    """Frames ``(U, V)`` whose principal angles do not exceed ``max_angle``."""
    U = gr.random_onb(rng, n, p, size)
    G = rng.normal(size=(size, n, p))
    H = G - U @ (np.swapaxes(U, -1, -2) @ G)
    s = np.linalg.norm(H, ord=2, axis=(-2, -1))
    H = H / s[:, None, None] * rng.uniform(0.05, max_angle, size)[:, None, None]
    return U, gr.gr_exp_onb(U, H)


def random_spsd_instance(rng: np.random.Generator, n: int, p: int, metric="ai",
                         scale: float = 0.5):
    """Random structure point ``X`` and hypergyroplane ``H`` near the identity."""
    def frame():
        return value_of(gr.gr_exp_id_onb(rng.normal(scale=scale, size=(p, n - p))))

    X = StructurePoint(frame(), spd.random_spd(rng, p, scale=scale))
    A = rng.normal(scale=scale, size=(p, p))
    H = SpsdHyperplane(frame(), spd.random_spd(rng, p, scale=scale),
                       rng.normal(scale=scale, size=(p, n - p)), A + A.T)
    return X, H


# gyro suite

def _gyro_props(metric):
    tag = str(metric)

    def tuples(rng, k):
        return [spd.random_spd(rng, 5, (k,), scale=0.5) for _ in range(3)]

    def add(a, b):
        return spd.spd_add(metric, a, b)

    def gyr(a, b, c):
        return spd.gyration_spd(metric, a, b, c)

    def left_identity(rng, k):
        a, _, _ = tuples(rng, k)
        return _rel(add(np.broadcast_to(np.eye(5), a.shape), a), a), 1e-8

    def left_inverse(rng, k):
        a, _, _ = tuples(rng, k)
        return _rel(add(spd.spd_inv(metric, a), a), np.broadcast_to(np.eye(5), a.shape)), 1e-8

    def left_cancellation(rng, k):
        a, b, _ = tuples(rng, k)
        return _rel(add(spd.spd_inv(metric, a), add(a, b)), b), 1e-8

    def left_gyroassociativity(rng, k):
        a, b, c = tuples(rng, k)
        return _rel(add(a, add(b, c)), add(add(a, b), gyr(a, b, c))), 1e-8

    def left_reduction(rng, k):
        a, b, c = tuples(rng, k)
        return _rel(gyr(a, b, c), gyr(add(a, b), b, c)), 1e-8

    def gyrocommutativity(rng, k):
        a, b, _ = tuples(rng, k)
        return _rel(add(a, b), gyr(a, b, add(b, a))), 1e-8

    def exp_transport_log(rng, k):
        a, b, _ = tuples(rng, k)
        eye = np.broadcast_to(np.eye(5), a.shape)
        V = spd.spd_transport(metric, eye, a, spd.spd_log(metric, eye, b))
        return _rel(add(a, b), spd.spd_exp(metric, a, V)), 1e-8

    props = [left_identity, left_inverse, left_cancellation, left_gyroassociativity,
             left_reduction, gyrocommutativity, exp_transport_log]
    return [(f"{tag}:{f.__name__}", f) for f in props]


def _gyro_suite():
    out = []
    for met in METRICS:
        out.extend(_gyro_props(met))
    return out


# basis suite

def _basis_suite():
    props = []
    for met in ("ai", "le", "lc"):
        betas = (0.0, 0.5, -0.1) if met == "ai" else (0.0,)
        for beta in betas:
            def ortho(rng, k, met=met, beta=beta):
                res = 0.0
                for m in range(2, 7):
                    G = spd.spd_basis(met, m, beta).gram()
                    res = max(res, float(np.abs(G - np.eye(len(G))).max()))
                return res, 1e-10
            props.append((f"{spd.as_metric(met, beta)}:orthonormal_basis", ortho))
        for m in (3, 5, 8):
            def ident(rng, k, met=met, m=m):
                P, W = identity_fc_params(met, m)
                X = spd.random_spd(rng, m, (k,), scale=0.5)
                return _rel(spd.spd_fc_forward(met, X, P, W, m), X), 1e-8
            props.append((f"{met}:fc_identity_m{m}", ident))
    return props


# grassmann suite

def _grassmann_suite():
    def log_equivalence(rng, k):
        res = 0.0
        for _ in range(k):
            n = int(rng.integers(2, 9))
            p = int(rng.integers(1, min(4, n - 1) + 1))
            U, V = random_subspace_pair(rng, n, p, np.pi / 2 - 0.1)
            P, Q = gr.tau(U[0]), gr.tau(V[0])
            res = max(res, _rel(gr.gr_log_projector(P, Q), gr.gr_log_projector_direct(P, Q)))
        return res, 1e-6

    def gauge_invariance(rng, k):
        U, V = random_subspace_pair(rng, 6, 3, np.pi / 2 - 0.1, k)
        O1 = np.linalg.qr(rng.normal(size=(k, 3, 3)))[0]
        O2 = np.linalg.qr(rng.normal(size=(k, 3, 3)))[0]
        P, Q = gr.tau(U), gr.tau(V)
        return _rel(gr.gr_log_projector(P, Q, U @ O1, V @ O2), gr.gr_log_projector(P, Q, U, V)), 1e-9

    def exp_log_roundtrip(rng, k):
        U, V = random_subspace_pair(rng, 7, 3, np.pi / 2 - 0.1, k)
        P, Q = gr.tau(U), gr.tau(V)
        return _rel(gr.gr_exp_projector(P, gr.gr_log_projector(P, Q)), Q), 1e-8

    def onb_exp_log_roundtrip(rng, k):
        U, V = random_subspace_pair(rng, 7, 3, np.pi / 2 - 0.1, k)
        W = gr.gr_exp_onb(U, gr.gr_log_onb(U, V))
        return _rel(gr.tau(W), gr.tau(V)), 1e-8

    def _near_id(rng, k, n=6, p=3):
        return gr.gr_exp_id_onb(rng.normal(scale=0.3, size=(k, p, n - p)))

    def left_identity(rng, k):
        Q = gr.tau(_near_id(rng, k))
        return _rel(gr.gr_add(np.broadcast_to(gr.identity_projector(6, 3), Q.shape), Q), Q), 1e-10

    def left_inverse(rng, k):
        P = gr.tau(_near_id(rng, k))
        I = np.broadcast_to(gr.identity_projector(6, 3), P.shape)
        return _rel(gr.gr_add(gr.gr_inv(P), P), I), 1e-10

    def left_cancellation(rng, k):
        P, Q = gr.tau(_near_id(rng, k)), gr.tau(_near_id(rng, k))
        return _rel(gr.gr_add(gr.gr_inv(P), gr.gr_add(P, Q)), Q), 1e-10

    def onb_projector_consistency(rng, k):
        U, V = _near_id(rng, k), _near_id(rng, k)
        return _rel(gr.tau(gr.gr_add_onb(U, V)), gr.gr_add(gr.tau(U), gr.tau(V))), 1e-10

    def nonlinearity_on_points(rng, k):
        U = _near_id(rng, k)
        return _rel(gr.gr_nonlinearity(gr.tau(U)), gr.tau(U)), 1e-10

    def skew_param_log(rng, k):
        B = rng.normal(scale=0.3, size=(k, 2, 3))
        return _rel(gr.gr_log_id(gr.skew_param_onb(B)), -B), 1e-10

    props = [log_equivalence, gauge_invariance, exp_log_roundtrip, onb_exp_log_roundtrip,
             left_identity, left_inverse, left_cancellation, onb_projector_consistency,
             nonlinearity_on_points, skew_param_log]
    return [(f.__name__, f) for f in props]


# spsd suite

def _spsd_suite():
    def _points(rng, k, n=5, p=2):
        U = gr.gr_exp_id_onb(rng.normal(scale=0.3, size=(k, p, n - p)))
        return StructurePoint(U, spd.random_spd(rng, p, (k,), scale=0.5))

    props = []
    for met in METRICS:
        cfg = SpsdConfig(lam=0.7, spd_metric=met)

        def left_identity(rng, k, cfg=cfg):
            B = _points(rng, k)
            e = structure_identity(5, 2)
            out = psd_add(cfg, StructurePoint(np.broadcast_to(e.U, B.U.shape),
                                              np.broadcast_to(e.S, B.S.shape)), B)
            return max(_rel(gr.tau(out.U), gr.tau(B.U)), _rel(out.S, B.S)), 1e-10

        def left_cancellation(rng, k, cfg=cfg):
            A, B = _points(rng, k), _points(rng, k)
            out = psd_add(cfg, psd_inv(cfg, A), psd_add(cfg, A, B))
            return max(_rel(gr.tau(out.U), gr.tau(B.U)), _rel(out.S, B.S)), 1e-10

        def spd_reduction(rng, k, cfg=cfg):
            res = 0.0
            for _ in range(k):
                X, H = random_spsd_instance(rng, 5, 2, cfg.spd_metric)
                H0 = SpsdHyperplane(H.U_P, H.S_P, np.zeros_like(H.C_W), H.A_W)
                ref = spd.spd_pseudo_gyrodistance(cfg.spd_metric, X.S,
                                                  spd.SpdHyperplane(H.S_P, H.A_W))
                res = max(res, _rel(psd_pseudo_gyrodistance(cfg, X, H0), ref))
            return res, 1e-12

        def grassmann_reduction(rng, k, cfg=cfg):
            res = 0.0
            for _ in range(k):
                X, H = random_spsd_instance(rng, 5, 2, cfg.spd_metric)
                H0 = SpsdHyperplane(H.U_P, H.S_P, H.C_W, np.zeros_like(H.A_W))
                C, _ = psd_sub_coords(cfg, StructurePoint(H.U_P, H.S_P), X)
                ref = abs(np.sum(value_of(C) * H.C_W)) * np.sqrt(cfg.lam) / np.linalg.norm(H.C_W)
                res = max(res, _rel(psd_pseudo_gyrodistance(cfg, X, H0), ref))
            return res, 1e-12

        def batch_equals_loop(rng, k, cfg=cfg):
            Xs = spd.random_spd(rng, 5, (max(k, 2),), scale=0.5)
            Hs = [random_spsd_instance(rng, 5, 2, cfg.spd_metric)[1] for _ in range(3)]
            st_b, st_l = CommonSubspaceState(5, 2), CommonSubspaceState(5, 2)
            d_b = value_of(batch_pseudo_gyrodistances(cfg, Xs, Hs, st_b, training=True))
            from .spsd import canonicalize_decomposed, gr_geodesic, gr_mean, spsd_decompose
            U, S = spsd_decompose(Xs, 2)
            st_l.U = gr_geodesic(st_l.U, gr_mean(value_of(U), init=st_l.U), cfg.gamma)
            rows = []
            for i in range(len(Xs)):
                Xc = canonicalize_decomposed(value_of(U)[i], value_of(S)[i], st_l.U)
                rows.append([float(value_of(psd_pseudo_gyrodistance(cfg, Xc, H))) for H in Hs])
            return max(_rel(d_b, np.array(rows)), _rel(st_b.U, st_l.U)), 1e-10

        def eval_mode_state_frozen(rng, k, cfg=cfg):
            Xs = spd.random_spd(rng, 5, (max(k, 2),), scale=0.5)
            Hs = [random_spsd_instance(rng, 5, 2, cfg.spd_metric)[1] for _ in range(2)]
            st = CommonSubspaceState(5, 2, gr.gr_exp_id_onb(rng.normal(scale=0.2, size=(2, 3))))
            before = st.copy()
            batch_pseudo_gyrodistances(cfg, Xs, Hs, st, training=False)
            return (0.0 if st == before else 1.0), 0.0

        for f in (left_identity, left_cancellation, spd_reduction, grassmann_reduction,
                  batch_equals_loop, eval_mode_state_frozen):
            props.append((f"{met}:{f.__name__}", f))
    return props


# gradient checks

def _small_graph(rng, N=5, d=3):
    nb = [{i} for i in range(N)]
    for i in range(N):
        j = (i + 1) % N
        nb[i].add(j)
        nb[j].add(i)
    nb[0].add(2)
    nb[2].add(0)
    return normalized_adjacency([sorted(s) for s in nb]), rng.normal(size=(N, d))


def _perturbed(params, rng, scale=0.2):
    return {k: v + scale * rng.normal(size=v.shape) for k, v in params.items()}


def _layer_target(layer, params, apply):
    keys = list(params)

    def f(vals):
        return apply(dict(zip(keys, vals)))
    return f, [params[k] for k in keys]


def _t_spd_fc(metric):
    def build(rng):
        layer = SpdFC(metric, n=3, m=2, init_std=0.3)
        params = _perturbed(layer.init_params(rng), rng)
        X = spd.random_spd(rng, 3, (2,), scale=0.5)
        return _layer_target(layer, params, lambda p: F.sum(layer.forward(p, X)))
    return build


def _t_spd_conv(rng):
    layer = SpdConv("ai", n=2, m=2, window=2, stride=1, init_std=0.3)
    params = _perturbed(layer.init_params(rng), rng)
    seq = spd.random_spd(rng, 2, (2, 3), scale=0.5)
    fc = SpdFC("le", n=2, m=2, init_std=0.3)
    fparams = _perturbed(fc.init_params(rng), rng)
    keys = list(params)

    def f(vals):
        p = dict(zip(keys, vals[:len(keys)]))
        Y = layer.forward(p, seq)
        return F.sum(fc.forward(fparams, Y))
    return f, [params[k] for k in keys]


def _t_spd_mlr(rng):
    head = SpdMLR("le", n=3, n_classes=3, init_std=0.3)
    params = _perturbed(head.init_params(rng), rng)
    X = spd.random_spd(rng, 3, (4,), scale=0.5)
    y = np.array([0, 1, 2, 1])
    return _layer_target(head, params, lambda p: cross_entropy(head.forward(p, X), y))


def _t_spsd_mlr(rng):
    head = SpsdMLR(SpsdConfig(lam=1.0, spd_metric="ai"), n=4, p=2, n_classes=2, init_std=0.3)
    params = _perturbed(head.init_params(rng), rng)
    head.state = CommonSubspaceState(4, 2, gr.gr_exp_id_onb(rng.normal(scale=0.2, size=(2, 2))))
    U = gr.gr_exp_id_onb(rng.normal(scale=0.3, size=(3, 2, 2)))
    lam = np.array([[3.0, 2.0, 0.5, 0.2], [2.5, 1.5, 0.4, 0.1], [4.0, 2.2, 0.3, 0.25]])
    Q = np.concatenate([U, np.linalg.qr(rng.normal(size=(3, 4, 4)))[0][..., :2]], axis=-1)
    Q = np.linalg.qr(Q)[0]
    X = (Q * lam[:, None, :]) @ np.swapaxes(Q, -1, -2)
    y = np.array([0, 1, 1])
    return _layer_target(head, params,
                         lambda p: cross_entropy(head.forward(p, X, training=False), y))


def _t_gcn_embed(rng):
    emb = GcnEmbed(3, 4, 2)
    params = _perturbed(emb.init_params(rng), rng)
    feats = rng.normal(size=(4, 3))
    W = rng.normal(size=(4, 4))
    return _layer_target(emb, params, lambda p: F.sum(F.mul(emb.forward(p, feats), W)))


def _t_gcn_layer(perspective):
    def build(rng):
        K, feats = _small_graph(rng)
        emb = GcnEmbed(3, 4, 2, perspective)
        ep = emb.init_params(rng)
        X = value_of(emb.forward(ep, feats))
        layer = GcnLayer(4, 2, perspective)
        params = _perturbed(layer.init_params(rng), rng)
        head = GcnHead(4, 2, 2, perspective)
        hp = head.init_params(rng)
        y = np.array([0, 1, 0, 1, 1])
        return _layer_target(layer, params,
                             lambda p: cross_entropy(head.forward(hp, layer.forward(p, X, K)), y))
    return build


def _t_gcn_head(rng):
    K, feats = _small_graph(rng)
    emb, layer, head = GcnEmbed(3, 4, 2), GcnLayer(4, 2), GcnHead(4, 2, 2)
    parts = {"e": _perturbed(emb.init_params(rng), rng),
             "l": _perturbed(layer.init_params(rng), rng),
             "h": head.init_params(rng)}
    flat = {f"{a}.{b}": v for a, sub in parts.items() for b, v in sub.items()}
    keys = list(flat)
    y = np.array([0, 1, 0, 1, 1])

    def f(vals):
        p = dict(zip(keys, vals))
        sub = {a: {k.split(".", 1)[1]: p[k] for k in keys if k.startswith(a + ".")}
               for a in parts}
        X = layer.forward(sub["l"], emb.forward(sub["e"], feats), K)
        return cross_entropy(head.forward(sub["h"], X), y)
    return f, [flat[k] for k in keys]


GRADCHECK_TARGETS: dict = {
    "spd-fc-ai": _t_spd_fc("ai"),
    "spd-fc-le": _t_spd_fc("le"),
    "spd-fc-lc": _t_spd_fc("lc"),
    "spd-conv": _t_spd_conv,
    "spd-mlr": _t_spd_mlr,
    "spsd-mlr": _t_spsd_mlr,
    "gr-gcn-embed": _t_gcn_embed,
    "gr-gcn-layer": _t_gcn_layer("projector"),
    "gr-gcn-onb-layer": _t_gcn_layer("onb"),
    "gr-gcn-head": _t_gcn_head,
}


def run_gradcheck(target: str, seed: int = 0) -> float:
    """Maximum relative error of tape vs finite-difference gradients for ``target``."""
    if target not in GRADCHECK_TARGETS:
        raise KeyError(f"unknown gradcheck target {target!r}; choose from "
                       f"{', '.join(GRADCHECK_TARGETS)}")
    f, inputs = GRADCHECK_TARGETS[target](derive_rng(seed, f"grad/{target}"))
    return gradcheck(f, inputs)


def _grad_suite():
    return [(t, lambda rng, k, t=t: (gradcheck(*GRADCHECK_TARGETS[t](rng)), 1e-3))
            for t in GRADCHECK_TARGETS]


SUITES: dict = {
    "gyro": _gyro_suite,
    "basis": _basis_suite,
    "grassmann": _grassmann_suite,
    "spsd": _spsd_suite,
    "grad": _grad_suite,
}


def run_suite(suite: str, seed: int = 0, n_samples: int = 100) -> list:
    """Run a property suite (or ``"all"``) and return :class:`CheckResult` rows.

    Parameters
    ----------
    suite : {"all", "gyro", "basis", "grassmann", "spsd", "grad"}
    seed : int, default=0
    n_samples : int, default=100
        Batch size or number of random instances per property.
    """
    names = list(SUITES) if suite == "all" else [suite]
    for s in names:
        if s not in SUITES:
            raise KeyError(f"unknown suite {s!r}; choose from all, {', '.join(SUITES)}")
    out = []
    for s in names:
        for name, fn in SUITES[s]():
            rng = derive_rng(seed, f"{s}/{name}")
            res, tol = fn(rng, n_samples)
            out.append(CheckResult(s, name, float(res), float(tol)))
    return out
