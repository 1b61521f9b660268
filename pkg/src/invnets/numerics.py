"""Dense real/complex linear-algebra kernel.

Thin contract layer over :mod:`numpy.linalg`. Every routine validates its
inputs, returns plain ``ndarray`` objects and never mutates its arguments.
"""

from __future__ import annotations

import cmath
import math

import numpy as np

DEFAULT_TOL = 1e-9
HERMITIAN_TOL = 1e-10

TWO_PI = 2.0 * math.pi


class ContractError(ValueError):
    """An input violates the documented precondition of a routine."""


class RankDeficientError(ContractError):
    """Least-squares system without full column rank."""

    def __init__(self, rank: int, cols: int):
        super().__init__(f"matrix has numerical rank {rank} < {cols} columns")
        self.rank = rank
        self.cols = cols


def phase(z: complex) -> float:
    """Angle of ``z`` in ``[0, 2*pi)``; ``phase(0) == 0`` by convention."""
    z = complex(z)
    if z == 0:
        return 0.0
    theta = cmath.phase(z)
    if theta < 0.0:
        theta += TWO_PI
    # -tiny + 2*pi rounds to exactly 2*pi
    if theta >= TWO_PI:
        theta = 0.0
    return theta


def phase_array(z: np.ndarray) -> np.ndarray:
    """Vectorized :func:`phase`."""
    theta = np.angle(np.asarray(z, dtype=complex))
    theta = np.where(theta < 0.0, theta + TWO_PI, theta)
    return np.where(theta >= TWO_PI, 0.0, theta)


def as_matrix(a, name: str = "A") -> np.ndarray:
    arr = np.asarray(a)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ContractError(f"{name} must be two-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ContractError(f"{name} has non-finite entries")
    return arr


def is_hermitian(a: np.ndarray, tol: float = HERMITIAN_TOL) -> bool:
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        return False
    return bool(np.max(np.abs(a - a.conj().T), initial=0.0) <= tol * max(1.0, np.max(np.abs(a), initial=0.0)))


def eig_hermitian(a) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a Hermitian matrix.

    Parameters
    ----------
    a : array_like, shape (n, n)
        Hermitian (real symmetric or complex Hermitian) matrix.

    Returns
    -------
    eigenvalues : ndarray, shape (n,)
        Real eigenvalues sorted in descending order.
    eigenvectors : ndarray, shape (n, n)
        Unitary matrix whose columns are the matching eigenvectors, so that
        ``a ~= Q @ diag(eigenvalues) @ Q.conj().T``.

    Raises
    ------
    ContractError
        If ``a`` is not square or not Hermitian within ``1e-10`` (relative to
        its largest entry).
    """
    a = as_matrix(a)
    if a.shape[0] != a.shape[1]:
        raise ContractError(f"expected a square matrix, got shape {a.shape}")
    if not is_hermitian(a):
        raise ContractError("matrix is not Hermitian within tolerance 1e-10")
    # symmetrize so roundoff asymmetry does not leak into eigh
    herm = 0.5 * (a + a.conj().T)
    w, q = np.linalg.eigh(herm)
    order = np.argsort(w)[::-1]
    return w[order].copy(), q[:, order].copy()


def solve_least_squares(a, b, rcond: float | None = None) -> np.ndarray:
    """Minimize ``||A X - B||_F`` for full-column-rank ``A``.

    Raises :class:`RankDeficientError` (carrying the numerical rank) when
    ``A`` does not have full column rank.
    """
    a = as_matrix(a, "A")
    b_arr = np.asarray(b)
    vector_rhs = b_arr.ndim == 1
    b = as_matrix(b_arr, "B")
    if a.shape[0] != b.shape[0]:
        raise ContractError(f"row mismatch: A has {a.shape[0]} rows, B has {b.shape[0]}")
    if a.shape[0] < a.shape[1]:
        raise RankDeficientError(a.shape[0], a.shape[1])
    s = np.linalg.svd(a, compute_uv=False)
    if rcond is None:
        rcond = max(a.shape) * np.finfo(float).eps
    rank = int(np.sum(s > rcond * s[0])) if s.size and s[0] > 0 else 0
    if rank < a.shape[1]:
        raise RankDeficientError(rank, a.shape[1])
    x, *_ = np.linalg.lstsq(a, b, rcond=None)
    return x[:, 0] if vector_rhs else x


def reconstruction_residual(a, eigenvalues, eigenvectors) -> float:
    """Frobenius norm of ``A - Q diag(w) Q*``."""
    q = np.asarray(eigenvectors)
    rebuilt = (q * np.asarray(eigenvalues)) @ q.conj().T
    return float(np.linalg.norm(np.asarray(a) - rebuilt))


def spd_inverse(a, name: str = "matrix") -> np.ndarray:
    """Inverse of a symmetric positive-definite matrix via Cholesky."""
    a = as_matrix(a, name)
    try:
        c = np.linalg.cholesky(0.5 * (a + a.T))
    except np.linalg.LinAlgError as exc:
        raise ContractError(f"{name} is not positive definite") from exc
    c_inv = np.linalg.solve(c, np.eye(a.shape[0]))
    return c_inv.T @ c_inv


def symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.conj().T)
