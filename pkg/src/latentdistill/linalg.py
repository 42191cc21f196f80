"""SVD, symmetric eigendecomposition and PSD log-determinants.

Thin wrappers over LAPACK (through numpy) that add input validation,
typed errors and a deterministic sign convention: every left singular
vector / eigenvector has its largest-magnitude entry non-negative (first
such entry on ties).
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, DefinitenessError, NumericInputError, ShapeError


@dataclass(frozen=True)
class SvdResult:
    u: np.ndarray
    singular_values: np.ndarray
    v: np.ndarray

    def reconstruct(self):
        return (self.u * self.singular_values) @ self.v.T


@dataclass(frozen=True)
class EigResult:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def _as_finite_matrix(a):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or 0 in a.shape:
        raise ShapeError(f"expected a non-empty matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NumericInputError("matrix has non-finite entries")
    return a


def _sign_flips(vectors):
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return signs


def svd(a):
    """Thin SVD ``a = u @ diag(s) @ v.T`` with ``r = min(m, n)`` components."""
    a = _as_finite_matrix(a)
    try:
        u, s, vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError(f"SVD did not converge: {exc}") from exc
    signs = _sign_flips(u)
    return SvdResult(u * signs, s, vt.T * signs)


def sym_eig(a):
    """Eigendecomposition of the symmetric part of ``a``; eigenvalues ascending."""
    a = _as_finite_matrix(a)
    if a.shape[0] != a.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {a.shape}")
    a = 0.5 * (a + a.T)
    try:
        w, q = np.linalg.eigh(a)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError(f"eigensolver did not converge: {exc}") from exc
    return EigResult(w, q * _sign_flips(q))


def logdet_psd(a):
    """``log det(a)`` of a symmetric positive-definite matrix via Cholesky."""
    a = _as_finite_matrix(a)
    if a.shape[0] != a.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {a.shape}")
    try:
        c = np.linalg.cholesky(0.5 * (a + a.T))
    except np.linalg.LinAlgError as exc:
        raise DefinitenessError("matrix is not positive definite") from exc
    return 2.0 * float(np.sum(np.log(np.diag(c))))
