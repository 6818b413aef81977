import numpy as np
import pytest
from scipy.linalg import logm

from gyronn import grassmann as gr
from gyronn import spd
from gyronn.checks import random_spsd_instance
from gyronn.exceptions import DegenerateHyperplaneError, RankError
from gyronn.oracles import psd_sampling_pseudo_gyrodistance
from gyronn.spsd import (CommonSubspaceState, SpsdConfig, SpsdHyperplane, StructurePoint,
                         batch_pseudo_gyrodistances, canonicalize, canonicalize_decomposed,
                         gr_geodesic, gr_mean, psd_add, psd_inner, psd_inv,
                         psd_pseudo_gyrodistance, spsd_decompose, structure_identity)

from conftest import rand_spd


def _near_frame(rng, n, p, scale=0.3, size=()):
    return gr.gr_exp_id_onb(rng.normal(scale=scale, size=tuple(size) + (p, n - p)))


def _rank_p(rng, n, p, size=()):
    U = gr.random_onb(rng, n, p, size)
    S = rand_spd(rng, p, size)
    return U @ S @ np.swapaxes(U, -1, -2)


def test_config_validation():
    with pytest.raises(ValueError):
        SpsdConfig(lam=0.0)
    with pytest.raises(ValueError):
        SpsdConfig(gamma=1.5)


def test_decompose_examples(rng):
    U, S = spsd_decompose(gr.identity_projector(5, 2), 2)
    np.testing.assert_allclose(gr.tau(U), gr.identity_projector(5, 2), atol=1e-12)
    np.testing.assert_allclose(S, np.eye(2), atol=1e-12)
    U0 = gr.random_onb(rng, 5, 2)
    U, S = spsd_decompose(U0 @ np.diag([3.0, 2.0]) @ U0.T, 2)
    np.testing.assert_allclose(np.diag(S), [3.0, 2.0], atol=1e-12)
    np.testing.assert_allclose(gr.tau(U), gr.tau(U0), atol=1e-12)


def test_decompose_truncation_bound(rng):
    X = rand_spd(rng, 5)
    U, S = spsd_decompose(X, 2)
    lam = np.sort(np.linalg.eigvalsh(X))[::-1]
    assert np.linalg.norm(U @ S @ U.T - X, 2) <= lam[2] + 1e-10


def test_decompose_rank_error(rng):
    with pytest.raises(RankError):
        spsd_decompose(_rank_p(rng, 5, 1), 2)


def test_canonicalize(rng):
    X = _rank_p(rng, 6, 2)
    U, S = spsd_decompose(X, 2)
    W = gr.tau_inv(gr.tau(U), 2) @ np.linalg.qr(rng.normal(size=(2, 2)))[0]
    Xc = canonicalize(X, U, W)
    np.testing.assert_allclose(np.linalg.eigvalsh(Xc.S), np.linalg.eigvalsh(S), atol=1e-10)
    W = _near_frame(rng, 6, 2)
    O = np.linalg.qr(rng.normal(size=(2, 2)))[0]
    a, b = canonicalize(X, U, W), canonicalize(X, U @ O, W)
    np.testing.assert_allclose(a.S, b.S, atol=1e-9)
    np.testing.assert_allclose(np.trace(a.S), np.trace(X), atol=1e-9)
    c = canonicalize_decomposed(U, S, W)
    np.testing.assert_allclose(c.S, a.S, atol=1e-10)


def test_group_laws(rng):
    cfg = SpsdConfig()
    e = structure_identity(5, 2)
    B = StructurePoint(_near_frame(rng, 5, 2), rand_spd(rng, 2))
    out = psd_add(cfg, e, B)
    np.testing.assert_allclose(gr.tau(out.U), gr.tau(B.U), atol=1e-12)
    np.testing.assert_allclose(out.S, B.S, atol=1e-12)
    out = psd_add(cfg, psd_inv(cfg, B), B)
    assert np.abs(gr.principal_angles(out.U, e.U)).max() < 1e-8
    np.testing.assert_allclose(out.S, np.eye(2), atol=1e-8)
    S1, S2 = rand_spd(rng, 2), rand_spd(rng, 2)
    out = psd_add(cfg, StructurePoint(e.U, S1), StructurePoint(e.U, S2))
    np.testing.assert_allclose(out.S, spd.spd_add("ai", S1, S2))


def test_inner(rng):
    cfg, cfg2 = SpsdConfig(lam=1.0, spd_metric="le"), SpsdConfig(lam=2.0, spd_metric="le")
    A = StructurePoint(_near_frame(rng, 5, 2), rand_spd(rng, 2))
    B = StructurePoint(_near_frame(rng, 5, 2), rand_spd(rng, 2))
    I = structure_identity(5, 2)
    E = StructurePoint(I.U, A.S)
    np.testing.assert_allclose(psd_inner(cfg, E, B), spd.spd_inner("le", A.S, B.S))
    gpart = float(psd_inner(cfg, A, B)) - float(spd.spd_inner("le", A.S, B.S))
    np.testing.assert_allclose(float(psd_inner(cfg2, A, B)) - float(spd.spd_inner("le", A.S, B.S)),
                               2 * gpart)
    D1 = gr.gr_log_projector(gr.identity_projector(5, 2), gr.tau(A.U))
    D2 = gr.gr_log_projector(gr.identity_projector(5, 2), gr.tau(B.U))
    ref = 0.5 * np.trace(D1 @ D2) + np.trace(logm(A.S).real @ logm(B.S).real)
    np.testing.assert_allclose(psd_inner(cfg, A, B), ref, atol=1e-10)


@pytest.mark.parametrize("metric", ["ai", "le", "lc"])
def test_reductions(rng, metric):
    cfg = SpsdConfig(lam=0.7, spd_metric=metric)
    X, H = random_spsd_instance(rng, 4, 2, metric)
    H0 = SpsdHyperplane(H.U_P, H.S_P, np.zeros_like(H.C_W), H.A_W)
    ref = spd.spd_pseudo_gyrodistance(metric, X.S, spd.SpdHyperplane(H.S_P, H.A_W))
    np.testing.assert_allclose(psd_pseudo_gyrodistance(cfg, X, H0), ref, rtol=1e-12)
    H1 = SpsdHyperplane(H.U_P, H.S_P, H.C_W, np.zeros((2, 2)))
    C = gr.gr_log_id(gr.gr_add_onb(gr.gr_inv_onb(H.U_P), X.U))
    ref = abs(np.sum(C * H.C_W)) * np.sqrt(cfg.lam) / np.linalg.norm(H.C_W)
    np.testing.assert_allclose(psd_pseudo_gyrodistance(cfg, X, H1), ref, rtol=1e-12)


def test_sampling_oracle_mixed():
    rng = np.random.default_rng(5)
    cfg = SpsdConfig(lam=1.0, spd_metric="ai")
    X, H = random_spsd_instance(rng, 4, 2, "ai")
    d = float(psd_pseudo_gyrodistance(cfg, X, H))
    o = psd_sampling_pseudo_gyrodistance(cfg, X, H, 100_000, rng)
    assert abs(o - d) <= 0.02 * d


def test_degenerate_hyperplane(rng):
    cfg = SpsdConfig()
    H = SpsdHyperplane(gr.identity_onb(4, 2), np.eye(2), np.zeros((2, 2)), np.zeros((2, 2)))
    with pytest.raises(DegenerateHyperplaneError):
        batch_pseudo_gyrodistances(cfg, rand_spd(rng, 4, (1,)), [H], CommonSubspaceState(4, 2))


def test_batch_matches_loop_and_state(rng):
    cfg = SpsdConfig(lam=1.0, spd_metric="le", gamma=0.1)
    Xs = rand_spd(rng, 5, (16,))
    Hs = [random_spsd_instance(rng, 5, 2, "le")[1] for _ in range(3)]
    st = CommonSubspaceState(5, 2, _near_frame(rng, 5, 2))
    frozen = st.copy()
    d_eval = batch_pseudo_gyrodistances(cfg, Xs, Hs, st, training=False)
    assert st == frozen and np.array_equal(st.U, frozen.U)
    U, S = spsd_decompose(Xs, 2)
    rows = []
    for i in range(16):
        Xc = canonicalize_decomposed(U[i], S[i], st.U)
        rows.append([float(psd_pseudo_gyrodistance(cfg, Xc, H)) for H in Hs])
    assert np.abs(d_eval - np.array(rows)).max() < 1e-10
    batch_pseudo_gyrodistances(cfg, Xs, Hs, st, training=True)
    ref = gr_geodesic(frozen.U, gr_mean(U, init=frozen.U), 0.1)
    np.testing.assert_array_equal(st.U, ref)


def test_mean_geodesic(rng):
    U = _near_frame(rng, 5, 2)
    np.testing.assert_allclose(gr_geodesic(U, _near_frame(rng, 5, 2), 0.0), U)
    np.testing.assert_allclose(gr.tau(gr_mean(np.stack([U, U]))), gr.tau(U), atol=1e-12)
