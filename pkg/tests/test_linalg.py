import numpy as np
import pytest
import scipy.fft
from hypothesis import given, settings, strategies as st

from loram.harness import dst_mean
from loram.linalg import LinalgError, SvdError, dst_basis, matmul, qr, random_orthogonal, svd
from loram.rng import Rng

from conftest import randn


def triple_loop(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            for k in range(a.shape[1]):
                out[i, j] += a[i, k] * b[k, j]
    return out


def test_matmul_examples():
    m = np.array([[1.0, 2], [3, 4]])
    assert np.array_equal(matmul(np.eye(2), m), m)
    assert np.array_equal(matmul([[1.0, 0]], m), [[1, 2]])
    a, b = randn(1, 5, 3), randn(2, 3, 4)
    assert np.abs(matmul(a, b) - triple_loop(a, b)).max() < 1e-12


def test_matmul_shape_mismatch():
    with pytest.raises(LinalgError, match="mismatch"):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def check_svd(w, res, tol=1e-10):
    U, S, V = res
    k = min(w.shape)
    assert U.shape == (w.shape[0], k) and V.shape == (w.shape[1], k)
    assert np.all(np.diff(S) <= 0) and np.all(S >= 0)
    assert np.abs(U.T @ U - np.eye(k)).max() < tol
    assert np.abs(V.T @ V - np.eye(k)).max() < tol
    assert np.linalg.norm(U * S @ V.T - w) < 1e-9 * (np.linalg.norm(w) + 1)
    for j in range(k):
        nz = np.flatnonzero(np.abs(U[:, j]) > 1e-12)
        assert U[nz[0], j] >= 0


def test_svd_diagonal():
    U, S, V = svd(np.diag([4.0, 1.0]))
    assert np.array_equal(U, np.eye(2)) and np.array_equal(V, np.eye(2))
    assert np.array_equal(S, [4.0, 1.0])


def test_svd_zero():
    U, S, V = svd(np.zeros((3, 3)))
    assert np.array_equal(S, np.zeros(3))
    check_svd(np.zeros((3, 3)), (U, S, V))


def test_svd_against_eigen_oracle():
    w = randn(3, 8, 5)
    ev = np.sort(np.linalg.eigvalsh(w.T @ w))[::-1]
    S = svd(w).S
    assert np.abs(S - np.sqrt(np.clip(ev, 0, None))).max() < 1e-9


@pytest.mark.parametrize("shape", [(1, 1), (1, 5), (5, 1), (7, 7), (12, 5), (5, 12), (33, 17), (200, 150)])
def test_svd_invariants(shape):
    w = randn(sum(shape), *shape)
    check_svd(w, svd(w))


def test_svd_rank_deficient():
    w = randn(4, 10, 3) @ randn(5, 3, 8)
    res = svd(w)
    check_svd(w, res)
    assert np.all(res.S[3:] == 0)


def test_svd_matches_lapack_values():
    w = randn(6, 40, 30)
    assert np.allclose(svd(w).S, np.linalg.svd(w, compute_uv=False), rtol=1e-12, atol=1e-12)


def test_svd_sweep_cap():
    with pytest.raises(SvdError):
        svd(randn(7, 20, 20), max_sweeps=1)


def test_svd_rejects_nonfinite():
    with pytest.raises(LinalgError):
        svd(np.array([[1.0, np.nan]]))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 2**32 - 1))
def test_svd_property(n, m, seed):
    w = randn(seed, n, m)
    check_svd(w, svd(w))


def test_svd_deterministic():
    w = randn(9, 30, 20)
    a, b = svd(w), svd(w.copy())
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_qr_examples():
    q, r = qr(np.eye(3))
    assert np.array_equal(q, np.eye(3)) and np.array_equal(r, np.eye(3))
    q, r = qr([[3.0], [4.0]])
    assert np.allclose(q, [[0.6], [0.8]], atol=1e-15) and np.allclose(r, [[5.0]], atol=1e-15)


@pytest.mark.parametrize("shape", [(6, 4), (4, 6), (5, 5), (1, 3)])
def test_qr_reconstruction(shape):
    w = randn(11, *shape)
    q, r = qr(w)
    k = min(shape)
    assert q.shape == (shape[0], k) and r.shape == (k, shape[1])
    assert np.linalg.norm(q @ r - w) < 1e-10
    assert np.abs(q.T @ q - np.eye(k)).max() < 1e-12
    assert np.all(np.diag(r) >= 0)
    assert np.all(np.tril(r, -1) == 0)


def test_dst_examples():
    assert np.array_equal(dst_basis(1, 1), [[1.0]])
    s = 1 / np.sqrt(2)
    assert np.allclose(dst_basis(2, 2), [[s, s], [s, -s]], atol=1e-15)
    phi = dst_basis(64, 64)
    assert np.abs(phi.T @ phi - np.eye(64)).max() < 1e-12
    assert abs(np.mean(phi**2) - 1 / 64) < 1e-12


@pytest.mark.parametrize("dim", [1, 2, 3, 17, 64, 255])
def test_dst_matches_scipy(dim):
    ref = scipy.fft.dst(np.eye(dim), type=1, norm="ortho", axis=0)
    assert np.abs(dst_basis(dim, dim) - ref).max() < 1e-13


def test_dst_prefix_columns():
    assert np.array_equal(dst_basis(50, 7), dst_basis(50, 50)[:, :7])


@pytest.mark.parametrize("dim", [1, 2, 5, 64, 400])
def test_dst_mean_closed_form(dim):
    # the mean is not zero; it matches the cotangent sum exactly
    assert abs(dst_basis(dim, dim).mean() - dst_mean(dim)) < 1e-12
    assert dst_mean(dim) > 0


def test_dst_bad_args():
    with pytest.raises(LinalgError):
        dst_basis(3, 4)
    with pytest.raises(LinalgError):
        dst_basis(0, 1)


def test_random_orthogonal():
    q = random_orthogonal(Rng(5), 30, 6)
    assert np.abs(q.T @ q - np.eye(6)).max() < 1e-12
    assert np.array_equal(q, random_orthogonal(Rng(5), 30, 6))
