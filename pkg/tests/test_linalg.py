import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rismimo.linalg import (
    LinAlgFailure,
    NonHermitianError,
    check_hermitian,
    hermitian_inv_sqrt,
    hermitian_sqrt,
    logdet_general,
    logdet_hpd,
    solve_general,
    solve_general_h,
)

from helpers import random_hpd


def test_sqrt_identity_and_diagonal():
    assert np.allclose(hermitian_sqrt(np.eye(4)), np.eye(4), atol=1e-15)
    assert np.allclose(hermitian_sqrt(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]), atol=1e-14)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 7), seed=st.integers(0, 2**32 - 1))
def test_sqrt_reconstructs(n, seed):
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    A = B @ B.conj().T
    S = hermitian_sqrt(A, rtol=1e-14)
    assert np.allclose(S, S.conj().T, atol=1e-12)
    assert np.linalg.norm(S @ S.conj().T - A) / np.linalg.norm(A) < 1e-10
    assert np.linalg.eigvalsh(S)[0] > -1e-10 * np.linalg.norm(A)


def test_sqrt_clamps_roundoff_negatives():
    v = np.array([1.0, 1j]) / np.sqrt(2)
    A = np.outer(v, v.conj()) - 1e-14 * np.eye(2)
    S = hermitian_sqrt(A, rtol=1e-12)
    assert np.all(np.isfinite(S))
    assert np.allclose(S @ S, np.outer(v, v.conj()), atol=1e-7)


def test_sqrt_rejects_non_hermitian_and_indefinite():
    with pytest.raises(NonHermitianError):
        hermitian_sqrt(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(LinAlgFailure):
        hermitian_sqrt(np.diag([1.0, -0.5]))


def test_hermitian_check_tolerance():
    A = np.eye(3, dtype=complex)
    A[0, 1] = 5e-13
    check_hermitian(A)
    A[0, 1] = 5e-12
    with pytest.raises(NonHermitianError):
        check_hermitian(A)


def test_inv_sqrt():
    rng = np.random.default_rng(3)
    A = random_hpd(5, rng)
    W = hermitian_inv_sqrt(A)
    assert np.allclose(W @ A @ W, np.eye(5), atol=1e-10)
    with pytest.raises(LinAlgFailure):
        hermitian_inv_sqrt(np.diag([1.0, 0.0]))


def test_logdet_known_values():
    assert logdet_hpd(np.eye(8)) == 0.0
    assert logdet_hpd(np.diag([np.e, np.e**2])) == pytest.approx(3.0, abs=1e-14)


def test_logdet_matches_eigenvalues():
    rng = np.random.default_rng(11)
    A = random_hpd(5, rng)
    ref = np.sum(np.log(np.linalg.eigvalsh(A)))
    assert abs(logdet_hpd(A) - ref) < 1e-10
    assert abs(logdet_general(A) - ref) < 1e-10


def test_logdet_no_overflow():
    A = np.diag(np.full(400, 1e300))
    assert logdet_hpd(A) == pytest.approx(400 * 300 * np.log(10), rel=1e-14)


@settings(max_examples=30, deadline=None)
@given(c=st.floats(1e-6, 1e6), seed=st.integers(0, 10_000))
def test_logdet_scaling(c, seed):
    rng = np.random.default_rng(seed)
    A = random_hpd(4, rng)
    assert logdet_hpd(c * A) == pytest.approx(logdet_hpd(A) + 4 * np.log(c), abs=1e-9)


def test_logdet_rejects_singular_with_diagnostic():
    with pytest.raises(LinAlgFailure, match="smallest eigenvalue"):
        logdet_hpd(np.diag([1.0, 0.0]))
    with pytest.raises(LinAlgFailure, match="condition"):
        logdet_hpd(np.diag([1.0, -1e-3]))


def test_logdet_general_nonhermitian():
    # similar to diag(2, 3), so the determinant is real and positive
    S = np.array([[1.0, 2.0j], [0.5, 1.0]])
    A = S @ np.diag([2.0, 3.0]) @ np.linalg.inv(S)
    assert logdet_general(A) == pytest.approx(np.log(6.0), abs=1e-12)
    with pytest.raises(LinAlgFailure, match="imaginary"):
        logdet_general(np.diag([1.0, 1j]))


def test_solve_trivial():
    rng = np.random.default_rng(0)
    B = rng.standard_normal((3, 2)) + 1j * rng.standard_normal((3, 2))
    assert np.allclose(solve_general(np.eye(3), B), B)
    assert np.allclose(solve_general(2 * np.eye(3), np.eye(3)), 0.5 * np.eye(3))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_solve_residual(seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((6, 6)) + 1j * rng.standard_normal((6, 6)) + 6 * np.eye(6)
    B = rng.standard_normal((6, 3)) + 1j * rng.standard_normal((6, 3))
    X = solve_general(A, B)
    assert np.linalg.norm(A @ X - B) / np.linalg.norm(B) < 1e-10
    Y = solve_general_h(A, B)
    assert np.linalg.norm(A.conj().T @ Y - B) / np.linalg.norm(B) < 1e-10


def test_solve_rank_deficient():
    A = np.array([[1.0, 2.0], [2.0, 4.0]])
    with pytest.raises(LinAlgFailure, match="pivot"):
        solve_general(A, np.eye(2))


def test_rejects_nonfinite():
    with pytest.raises(ValueError):
        logdet_general(np.array([[np.nan, 0], [0, 1.0]]))
