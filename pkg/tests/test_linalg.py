import numpy as np
import pytest
from scipy.linalg import expm, logm, sqrtm

from gyronn import linalg
from gyronn.exceptions import DomainError, NotPositiveDefiniteError

from conftest import rand_spd, rand_sym


def test_sym_eig_diagonal():
    Q, lam = linalg.sym_eig(np.diag([3.0, 1.0]))
    np.testing.assert_allclose(lam, [3.0, 1.0])
    np.testing.assert_allclose(np.abs(Q), np.eye(2), atol=1e-15)


def test_sym_eig_swap():
    Q, lam = linalg.sym_eig(np.array([[0.0, 1.0], [1.0, 0.0]]))
    np.testing.assert_allclose(lam, [1.0, -1.0], atol=1e-15)
    r = 1 / np.sqrt(2)
    np.testing.assert_allclose(np.abs(Q), [[r, r], [r, r]], atol=1e-15)
    assert Q[0, 0] * Q[1, 0] > 0 and Q[0, 1] * Q[1, 1] < 0


def test_sym_eig_reconstruction(rng):
    S = rand_sym(rng, 6)
    Q, lam = linalg.sym_eig(S)
    assert np.all(np.diff(lam) <= 0)
    assert np.abs(Q @ np.diag(lam) @ Q.T - S).max() < 1e-10


def test_spd_fn_values(rng):
    np.testing.assert_allclose(linalg.spd_fn(np.eye(3), "log"), np.zeros((3, 3)), atol=1e-15)
    np.testing.assert_allclose(linalg.spd_fn(np.diag([4.0, 9.0]), "sqrt"), np.diag([2.0, 3.0]))
    P = rand_spd(rng, 5)
    R = linalg.spd_fn(P, "invsqrt")
    assert np.abs(np.linalg.inv(R @ R) - P).max() < 1e-9
    np.testing.assert_allclose(linalg.spd_fn(P, "log"), logm(P).real, atol=1e-10)
    np.testing.assert_allclose(linalg.spd_fn(P, "sqrt"), sqrtm(P).real, atol=1e-10)
    S = rand_sym(rng, 4)
    np.testing.assert_allclose(linalg.spd_fn(S, "exp"), expm(S), atol=1e-10)


def test_spd_fn_rejects_non_spd():
    with pytest.raises(DomainError):
        linalg.spd_fn(np.diag([1.0, -1.0]), "log")


def test_cholesky_examples():
    np.testing.assert_allclose(linalg.cholesky(np.eye(3)), np.eye(3))
    np.testing.assert_allclose(linalg.cholesky(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]))
    np.testing.assert_allclose(linalg.cholesky(np.array([[4.0, 2.0], [2.0, 5.0]])),
                               [[2.0, 0.0], [1.0, 2.0]])
    with pytest.raises(NotPositiveDefiniteError):
        linalg.cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_qr_thin(rng):
    V, R = linalg.qr_thin(np.array([[3.0], [4.0]]))
    np.testing.assert_allclose(V, [[0.6], [0.8]])
    np.testing.assert_allclose(R, [[5.0]])
    U = np.linalg.qr(rng.normal(size=(5, 2)))[0]
    V, R = linalg.qr_thin(U)
    np.testing.assert_allclose(np.abs(np.diag(R)), 1.0, atol=1e-12)
    np.testing.assert_allclose(V @ R, U, atol=1e-12)
    X = rng.normal(size=(6, 3))
    V, R = linalg.qr_thin(X)
    assert np.abs(V @ R - X).max() < 1e-10
    np.testing.assert_allclose(np.triu(R), R)


def test_svd_thin(rng):
    _, s, _ = linalg.svd_thin(np.diag([2.0, 1.0]))
    np.testing.assert_allclose(s, [2.0, 1.0])
    _, s, _ = linalg.svd_thin(np.zeros((3, 2)))
    np.testing.assert_allclose(s, 0.0)
    X = rng.normal(size=(5, 3))
    U, s, V = linalg.svd_thin(X)
    assert U.shape == (5, 3) and V.shape == (3, 3)
    assert np.abs(U @ np.diag(s) @ V.T - X).max() < 1e-10


def _taylor_exp(A, terms=60):
    k = max(0, int(np.ceil(np.log2(max(np.abs(A).sum(1).max(), 1.0)))) + 1)
    B = A / 2**k
    out, term = np.eye(len(A)), np.eye(len(A))
    for i in range(1, terms):
        term = term @ B / i
        out = out + term
    for _ in range(k):
        out = out @ out
    return out


def test_mat_exp(rng):
    np.testing.assert_allclose(linalg.mat_exp(np.zeros((3, 3))), np.eye(3))
    t = 0.7
    np.testing.assert_allclose(linalg.mat_exp(np.array([[0, t], [-t, 0]])),
                               [[np.cos(t), np.sin(t)], [-np.sin(t), np.cos(t)]], atol=1e-14)
    A = rng.normal(size=(4, 4))
    assert np.abs(linalg.mat_exp(A) - _taylor_exp(A)).max() < 1e-9


def test_mat_log_orthogonal(rng):
    np.testing.assert_allclose(linalg.mat_log_orthogonal(np.eye(3)), 0.0, atol=1e-15)
    c, s = np.cos(0.3), np.sin(0.3)
    L = linalg.mat_log_orthogonal(np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]]))
    np.testing.assert_allclose(L, [[0, -0.3, 0], [0.3, 0, 0], [0, 0, 0]], atol=1e-12)
    A = rng.normal(scale=0.3, size=(5, 5))
    K = A - A.T
    assert np.abs(linalg.mat_log_orthogonal(expm(K)) - K).max() < 1e-8


def test_concat_spd():
    np.testing.assert_allclose(linalg.concat_spd([np.eye(2)]), np.eye(2))
    np.testing.assert_allclose(linalg.concat_spd([np.diag([2.0]), np.diag([3.0, 4.0])]),
                               np.diag([2.0, 3.0, 4.0]))


def test_concat_spd_spectrum(rng):
    Ps = [rand_spd(rng, 2), rand_spd(rng, 3)]
    lam = np.sort(np.linalg.eigvalsh(linalg.concat_spd(Ps)))
    ref = np.sort(np.concatenate([np.linalg.eigvalsh(P) for P in Ps]))
    np.testing.assert_allclose(lam, ref, atol=1e-12)


def test_lower_and_diag_parts(rng):
    np.testing.assert_allclose(linalg.lower_strict(np.eye(3)), 0.0)
    np.testing.assert_allclose(linalg.diag_part(np.array([[1.0, 2.0], [3.0, 4.0]])),
                               np.diag([1.0, 4.0]))
    Y = rng.normal(size=(4, 4))
    recon = linalg.lower_strict(Y) + linalg.diag_part(Y) + linalg.lower_strict(Y.T).T
    np.testing.assert_allclose(recon, Y)


def test_matrix_csv_roundtrip(tmp_path, rng):
    X = rng.normal(size=(3, 4))
    path = tmp_path / "m.csv"
    linalg.write_matrix_csv(path, X)
    np.testing.assert_array_equal(linalg.read_matrix_csv(path), X)


def test_batched_inputs(rng):
    P = rand_spd(rng, 3, (2, 4))
    L = linalg.spd_fn(P, "log")
    assert L.shape == (2, 4, 3, 3)
    np.testing.assert_allclose(L[1, 2], logm(P[1, 2]).real, atol=1e-10)
