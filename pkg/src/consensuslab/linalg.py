"""Dense real linear algebra used by the analysis and the simulator.

Everything here works on small dense ``float64`` arrays (a few hundred rows
at most).  Eigenproblems are delegated to LAPACK through :mod:`numpy.linalg`;
the wrappers add the symmetry checks, ordering and error reporting the rest
of the package relies on.
"""

from __future__ import annotations

import math

import numpy as np

SYMMETRY_TOL = 1e-12

# exp() overflows float64 above this argument
_EXP_MAX = math.log(np.finfo(np.float64).max)


class EigenConvergenceError(ArithmeticError):
    """The symmetric eigensolver failed to converge."""

    def __init__(self, order: int, detail: str):
        super().__init__(f"eigensolver did not converge for order-{order} matrix: {detail}")
        self.order = order
        self.detail = detail


def _as_square(M) -> np.ndarray:
    A = np.asarray(M, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    return A


def check_symmetric(M, tol: float = SYMMETRY_TOL) -> np.ndarray:
    """Return ``M`` as a float array, raising if it is not symmetric.

    The tolerance is relative to ``1 + max|M|``.
    """
    A = _as_square(M)
    scale = 1.0 + (np.abs(A).max() if A.size else 0.0)
    asym = np.abs(A - A.T).max() if A.size else 0.0
    if asym > tol * scale:
        raise ValueError(f"matrix is not symmetric (max |M - M^T| = {asym:.3e})")
    return A


def symmetrize(M) -> np.ndarray:
    A = _as_square(M)
    return 0.5 * (A + A.T)


def sym_eigen(M, tol: float = SYMMETRY_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a real symmetric matrix.

    Returns:
        ``(w, V)`` with eigenvalues ``w`` ascending and orthonormal
        eigenvectors in the columns of ``V``, so that ``M @ V == V * w``.

    Raises:
        ValueError: ``M`` is not square, not finite or not symmetric.
        EigenConvergenceError: LAPACK reported non-convergence.
    """
    A = check_symmetric(M, tol)
    # solve the exactly symmetric part so rounding asymmetry cannot leak in
    A = 0.5 * (A + A.T)
    try:
        w, V = np.linalg.eigh(A)
    except np.linalg.LinAlgError as exc:
        raise EigenConvergenceError(A.shape[0], str(exc)) from exc
    return w, V


def sym_eigvals(M, tol: float = SYMMETRY_TOL) -> np.ndarray:
    A = check_symmetric(M, tol)
    try:
        return np.linalg.eigvalsh(0.5 * (A + A.T))
    except np.linalg.LinAlgError as exc:
        raise EigenConvergenceError(A.shape[0], str(exc)) from exc


def lambda_min(M) -> float:
    w = sym_eigvals(M)
    return float(w[0]) if w.size else math.inf


def lambda_max(M) -> float:
    w = sym_eigvals(M)
    return float(w[-1]) if w.size else -math.inf


def kron(A, B) -> np.ndarray:
    """Kronecker product ``A (x) B`` (block ``(i, j)`` equal to ``a_ij * B``)."""
    return np.kron(np.atleast_2d(np.asarray(A, dtype=np.float64)),
                   np.atleast_2d(np.asarray(B, dtype=np.float64)))


def sym_expm(M, tol: float = SYMMETRY_TOL) -> np.ndarray:
    """Matrix exponential of a symmetric matrix via its eigendecomposition.

    Raises:
        OverflowError: the largest eigenvalue exceeds the float64 exponent range.
    """
    w, V = sym_eigen(M, tol)
    if w.size and w[-1] > _EXP_MAX:
        raise OverflowError(f"sym_expm: eigenvalue {w[-1]:.6g} overflows exp()")
    E = (V * np.exp(w)) @ V.T
    return 0.5 * (E + E.T)


def min_abs_eig(M, symmetrize: bool = False) -> float:
    """Smallest eigenvalue modulus of a square matrix.

    With ``symmetrize=True`` the symmetric part ``(M + M^T)/2`` is used and
    the symmetric solver applies; otherwise the general eigenvalues are taken.
    """
    A = _as_square(M)
    if A.size == 0:
        return 0.0
    if symmetrize:
        w = sym_eigvals(0.5 * (A + A.T))
    else:
        w = np.linalg.eigvals(A)
    return float(np.abs(w).min())


def max_abs_eig(M, symmetrize: bool = False) -> float:
    A = _as_square(M)
    if A.size == 0:
        return 0.0
    w = sym_eigvals(0.5 * (A + A.T)) if symmetrize else np.linalg.eigvals(A)
    return float(np.abs(w).max())


def spectral_norm(M) -> float:
    """2-norm (largest singular value)."""
    A = np.atleast_2d(np.asarray(M, dtype=np.float64))
    if A.size == 0:
        return 0.0
    return float(np.linalg.norm(A, 2))


def is_positive_definite(M, tol: float = 0.0) -> bool:
    w = sym_eigvals(M)
    return bool(w.size and w[0] > tol)
