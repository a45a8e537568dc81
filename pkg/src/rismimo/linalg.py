"""Dense complex-matrix helpers shared by the rest of the package.

Everything here is a pure function of numpy arrays. Square roots and
log-determinants of Hermitian matrices go through ``eigh`` so that tiny
negative eigenvalues produced by roundoff can be clamped to zero.
"""

from __future__ import annotations

import warnings

import numpy as np
import scipy.linalg as sla

__all__ = [
    "LinAlgFailure",
    "NonHermitianError",
    "check_hermitian",
    "hermitize",
    "hermitian_sqrt",
    "hermitian_inv_sqrt",
    "logdet_hpd",
    "logdet_general",
    "solve_general",
    "solve_general_h",
]

HERMITIAN_ATOL = 1e-12


class LinAlgFailure(ArithmeticError):
    """A factorization or solve hit a singular / indefinite matrix."""


class NonHermitianError(ValueError):
    pass


def _as_square(A) -> np.ndarray:
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    return A


def check_hermitian(A, atol: float = HERMITIAN_ATOL, rtol: float = 0.0) -> np.ndarray:
    """Return ``A`` as an array, raising if it is not Hermitian.

    The allowed entry mismatch is ``atol + rtol * max|A|``.
    """
    A = _as_square(A)
    mismatch = np.max(np.abs(A - A.conj().T)) if A.size else 0.0
    scale = np.max(np.abs(A)) if A.size else 0.0
    if mismatch > atol + rtol * scale:
        raise NonHermitianError(f"matrix is not Hermitian (max |A - A^H| = {mismatch:.3e})")
    return A


def hermitize(A) -> np.ndarray:
    A = np.asarray(A)
    return 0.5 * (A + A.conj().T)


def _psd_eigh(A, rtol: float):
    A = check_hermitian(A, rtol=rtol)
    w, U = np.linalg.eigh(hermitize(A))
    top = max(float(np.max(np.abs(w))), 0.0) if w.size else 0.0
    if w.size and w[0] < -1e-10 * top:
        raise LinAlgFailure(f"matrix is not PSD (smallest eigenvalue {w[0]:.3e}, largest {top:.3e})")
    return np.clip(w, 0.0, None), U


def hermitian_sqrt(A, rtol: float = 0.0) -> np.ndarray:
    """Principal square root ``S`` of a Hermitian PSD matrix, ``S @ S^H == A``.

    ``rtol`` relaxes the Hermitian check relative to the largest entry; it is
    meant for matrices that are Hermitian only in exact arithmetic.
    """
    w, U = _psd_eigh(A, rtol)
    return (U * np.sqrt(w)) @ U.conj().T


def hermitian_inv_sqrt(A, rtol: float = 0.0) -> np.ndarray:
    """``A^{-1/2}`` of a Hermitian positive-definite matrix."""
    A = check_hermitian(A, rtol=rtol)
    w, U = np.linalg.eigh(hermitize(A))
    if w.size and w[0] <= 1e-14 * max(abs(w[-1]), 1e-300):
        raise LinAlgFailure(f"matrix is not positive definite (eigenvalues in [{w[0]:.3e}, {w[-1]:.3e}])")
    return (U / np.sqrt(w)) @ U.conj().T


def logdet_hpd(A, rtol: float = 0.0) -> float:
    """``log det A`` for Hermitian positive-definite ``A`` via its eigenvalues."""
    A = check_hermitian(A, rtol=rtol)
    w = np.linalg.eigvalsh(hermitize(A))
    if w.size and w[0] <= 0.0:
        cond = np.inf if w[0] == 0 else abs(w[-1] / w[0])
        raise LinAlgFailure(
            f"logdet of a matrix that is not positive definite "
            f"(smallest eigenvalue {w[0]:.3e}, condition {cond:.3e})"
        )
    return float(np.sum(np.log(w)))


def logdet_general(A, imag_tol: float = 1e-8) -> float:
    """Real ``log det A`` of a general matrix whose determinant is positive.

    Computed from an LU factorization with the complex logarithm; the
    imaginary part (mod 2*pi) must be below ``imag_tol``.
    """
    A = _as_square(A).astype(complex)
    sign, logabs = np.linalg.slogdet(A)
    if sign == 0:
        raise LinAlgFailure("logdet of a singular matrix")
    phase = float(np.angle(sign))
    if abs(phase) > imag_tol:
        raise LinAlgFailure(f"log det has imaginary part {phase:.3e}; expected a real value")
    return float(logabs)


def _lu(A):
    A = _as_square(A)
    with warnings.catch_warnings():
        # singularity is reported below with a pivot diagnostic
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(A, check_finite=False)
    pivots = np.abs(np.diag(lu))
    scale = max(float(np.max(np.abs(A))), 1e-300)
    smallest = float(np.min(pivots)) if pivots.size else 1.0
    if smallest <= 1e-14 * scale * A.shape[0]:
        raise LinAlgFailure(f"matrix is numerically singular (smallest pivot {smallest:.3e}, scale {scale:.3e})")
    return lu, piv


def solve_general(A, B) -> np.ndarray:
    """Solve ``A X = B`` for a square, nonsingular (possibly non-Hermitian) ``A``."""
    lu, piv = _lu(A)
    return sla.lu_solve((lu, piv), np.asarray(B), check_finite=False)


def solve_general_h(A, B) -> np.ndarray:
    """Solve ``A^H X = B``."""
    lu, piv = _lu(A)
    return sla.lu_solve((lu, piv), np.asarray(B), trans=2, check_finite=False)
