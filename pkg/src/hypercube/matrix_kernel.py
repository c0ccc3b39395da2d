"""Dense complex-matrix primitives in the normalized Frobenius geometry.

Every inner product and norm here is scaled by ``1/n`` so that a unitary
matrix has unit norm. Matrices are plain ``numpy`` arrays of dtype
``complex128``; functions that accept a *stack* of matrices operate on the
last two axes.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "DimensionError",
    "as_cmatrix",
    "frob_inner",
    "norm_sq",
    "matmul",
    "dagger",
    "random_unitary",
    "nearest_unitary",
    "numerical_rank",
    "singular_values",
]


class DimensionError(ValueError):
    """Raised when matrix operands have incompatible shapes."""


def as_cmatrix(X) -> np.ndarray:
    """Coerce ``X`` to a square complex128 matrix with finite entries."""
    M = np.asarray(X, dtype=np.complex128)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    return M


def _check_pair(X: np.ndarray, Y: np.ndarray) -> None:
    if X.shape[-2:] != Y.shape[-2:]:
        raise DimensionError(f"shape mismatch: {X.shape} vs {Y.shape}")


def dagger(X) -> np.ndarray:
    """Conjugate transpose over the last two axes."""
    return np.conj(np.swapaxes(np.asarray(X), -1, -2))


def frob_inner(X, Y) -> complex:
    """Normalized Frobenius inner product ``Tr(X^dag Y) / n``.

    Conjugate-linear in ``X`` and linear in ``Y``.
    """
    X = np.asarray(X, dtype=np.complex128)
    Y = np.asarray(Y, dtype=np.complex128)
    _check_pair(X, Y)
    n = X.shape[-1]
    return complex(np.vdot(X, Y) / n)


def norm_sq(X) -> float:
    """Squared normalized Frobenius norm; equals 1 for any unitary."""
    X = np.asarray(X, dtype=np.complex128)
    n = X.shape[-1]
    return float((X.real**2 + X.imag**2).sum() / n)


def stack_norm_sq(X: np.ndarray) -> np.ndarray:
    """Per-slice squared normalized norms of a ``(..., n, n)`` stack."""
    n = X.shape[-1]
    return (X.real**2 + X.imag**2).sum(axis=(-1, -2)) / n


def matmul(X, Y) -> np.ndarray:
    X = np.asarray(X, dtype=np.complex128)
    Y = np.asarray(Y, dtype=np.complex128)
    if X.shape[-1] != Y.shape[-2]:
        raise DimensionError(f"cannot multiply shapes {X.shape} and {Y.shape}")
    return X @ Y


def random_unitary(n: int, seed: int) -> np.ndarray:
    """Haar-distributed unitary from QR of a complex Ginibre matrix.

    The diagonal of ``R`` is phase-fixed so the result does not depend on the
    LAPACK sign convention. Deterministic per ``(n, seed)``.
    """
    if n < 1:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    Z = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / np.sqrt(2)
    Q, R = np.linalg.qr(Z)
    d = np.diagonal(R)
    phases = d / np.abs(d)
    return Q * phases[None, :]


def nearest_unitary(X) -> np.ndarray:
    """Unitary polar factor of ``X`` (closest unitary in Frobenius norm)."""
    U, _, Vh = np.linalg.svd(np.asarray(X, dtype=np.complex128))
    return U @ Vh


def singular_values(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.complex128)
    if not np.all(np.isfinite(X)):
        raise ValueError("matrix has non-finite entries")
    return np.linalg.svd(X, compute_uv=False)


def numerical_rank(X, tol: float = 1e-8) -> int:
    """Number of singular values above ``tol`` times the largest one.

    Accepts rectangular input (used for tensor unfoldings). The zero matrix
    has rank 0.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    s = singular_values(X)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.count_nonzero(s > tol * s[0]))
