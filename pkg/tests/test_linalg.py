import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cersa_forge.linalg import (
    ConvergenceError,
    as_matrix,
    frobenius,
    grassmann,
    matmul,
    orthonormality_residual,
    svd,
    truncate,
)
from conftest import rel


def test_matmul_identity(rng):
    a = rng.standard_normal((3, 4))
    assert np.array_equal(matmul(np.eye(3), a), a)


def test_matmul_hand_example():
    out = matmul([[1, 2], [3, 4]], [[0], [1]])
    assert out.tolist() == [[2.0], [4.0]]


def test_matmul_mismatch_names_both_shapes():
    with pytest.raises(ValueError, match="2x3 times 2x2"):
        matmul(np.ones((2, 3)), np.ones((2, 2)))


@pytest.mark.parametrize("bad", [np.nan, np.inf])
def test_non_finite_rejected(bad):
    a = np.ones((3, 3))
    a[1, 1] = bad
    with pytest.raises(ValueError, match="finite"):
        svd(a)


def test_as_matrix_rejects_vectors():
    with pytest.raises(ValueError):
        as_matrix(np.ones(3))


def test_svd_diagonal():
    f = svd(np.diag([3.0, 2.0, 1.0]))
    assert np.allclose(f.sigma, [3, 2, 1], atol=1e-15)
    assert np.allclose(np.abs(f.u), np.eye(3), atol=1e-15)
    assert np.allclose(np.abs(f.vt), np.eye(3), atol=1e-15)


def test_svd_rank_one():
    rng = np.random.default_rng(1)
    u = rng.standard_normal(6)
    v = rng.standard_normal(4)
    u /= np.linalg.norm(u)
    v /= np.linalg.norm(v)
    f = svd(5.0 * np.outer(u, v))
    assert f.sigma[0] == pytest.approx(5.0, rel=1e-13)
    assert np.all(np.abs(f.sigma[1:]) < 1e-13)
    assert orthonormality_residual(f.u) < 1e-12
    assert orthonormality_residual(f.vt.T) < 1e-12


def test_svd_random_reconstruction(rng):
    a = rng.standard_normal((40, 30))
    f = svd(a)
    assert rel(f.reconstruct(), a) <= 1e-9
    # independent oracle: LAPACK singular values
    assert np.allclose(f.sigma, np.linalg.svd(a, compute_uv=False), rtol=1e-12, atol=1e-12)


def test_svd_wide_and_zero():
    rng = np.random.default_rng(2)
    a = rng.standard_normal((3, 7))
    f = svd(a)
    assert f.u.shape == (3, 3) and f.vt.shape == (3, 7)
    assert rel(f.reconstruct(), a) < 1e-12
    z = svd(np.zeros((4, 3)))
    assert np.all(z.sigma == 0)
    assert orthonormality_residual(z.u) < 1e-12


def test_svd_sorted_and_sign_convention(rng):
    f = svd(rng.standard_normal((12, 9)))
    assert np.all(np.diff(f.sigma) <= 0)
    for col in f.u.T:
        assert col[np.argmax(np.abs(col))] > 0


def test_convergence_error_carries_residual():
    err = ConvergenceError(30, 1e-3)
    assert err.sweeps == 30 and err.residual == 1e-3
    assert "30" in str(err)


@settings(max_examples=40, deadline=None)
@given(
    m=st.integers(1, 12),
    n=st.integers(1, 12),
    seed=st.integers(0, 2**31),
    rank=st.integers(1, 12),
)
def test_svd_property_rank_deficient(m, n, seed, rank):
    g = np.random.default_rng(seed)
    rank = min(rank, m, n)
    a = g.standard_normal((m, rank)) @ g.standard_normal((rank, n))
    f = svd(a)
    assert rel(f.reconstruct(), a) < 1e-11
    assert orthonormality_residual(f.u) < 1e-11
    assert orthonormality_residual(f.vt.T) < 1e-11
    assert np.all(f.sigma >= 0)


def test_truncate_full_rank_is_exact(rng):
    a = rng.standard_normal((6, 5))
    f = svd(a)
    assert frobenius(a - truncate(f, 5).reconstruct()) < 1e-12 * frobenius(a)


def test_truncate_diag_error_is_sigma3():
    f = svd(np.diag([3.0, 2.0, 1.0]))
    err = frobenius(np.diag([3.0, 2.0, 1.0]) - truncate(f, 2).reconstruct())
    assert err == pytest.approx(1.0, rel=1e-14)


def test_truncate_random_64x48_k10(rng):
    a = rng.standard_normal((64, 48))
    sigma = np.linalg.svd(a, compute_uv=False)
    expected = np.sqrt(np.sum(sigma[10:] ** 2))
    err = frobenius(a - truncate(svd(a), 10).reconstruct())
    assert abs(err - expected) / expected < 1e-10


@pytest.mark.parametrize("k", [0, 6])
def test_truncate_out_of_range(k):
    with pytest.raises(ValueError):
        truncate(svd(np.eye(5)), k)


def test_grassmann_examples():
    e = np.eye(4)
    assert grassmann(e[:, :2], e[:, :2], 2, 2) == pytest.approx(1.0)
    assert grassmann(e[:, :2], e[:, 2:], 2, 2) == pytest.approx(0.0)
    assert grassmann(e[:, :1], e[:, :2], 1, 2) == pytest.approx(1.0)


def test_grassmann_rejects_non_orthonormal():
    with pytest.raises(ValueError):
        grassmann(2.0 * np.eye(3), np.eye(3), 2, 2)


def test_grassmann_bounds():
    with pytest.raises(ValueError):
        grassmann(np.eye(3), np.eye(3), 4, 1)


def test_grassmann_basis_rotation_invariant(rng):
    q, _ = np.linalg.qr(rng.standard_normal((10, 10)))
    p, _ = np.linalg.qr(rng.standard_normal((10, 10)))
    a, b = q[:, :4], p[:, :3]
    rot, _ = np.linalg.qr(rng.standard_normal((4, 4)))
    assert grassmann(a @ rot, b, 4, 3) == pytest.approx(grassmann(a, b, 4, 3), abs=1e-13)
