"""Dense matrix helpers and stabilized log-sum-exp / softmax.

Matrices are 2-D float64 numpy arrays and vectors are 1-D float64 arrays.
Every exported operation returns a fresh array and never mutates its inputs.
"""
import numpy as np
from scipy import special

from ..errors import DomainError, NonFiniteError, ShapeError

Matrix = np.ndarray
Vector = np.ndarray


def to_matrix(a, name: str = "matrix") -> Matrix:
    """Validate and convert ``a`` to a finite, nonempty float64 matrix."""
    m = np.array(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    if m.shape[0] < 1 or m.shape[1] < 1:
        raise ShapeError(f"{name} must be nonempty, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NonFiniteError(f"{name} has non-finite entries")
    return m


def to_vector(v, name: str = "vector") -> Vector:
    """Validate and convert ``v`` to a finite, nonempty float64 vector."""
    x = np.array(v, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {x.shape}")
    if x.size == 0:
        raise DomainError(f"{name} must be nonempty")
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"{name} has non-finite entries")
    return x


def check_finite(a: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise NonFiniteError(f"{what} produced non-finite values")
    return a


def require_cols(a: Matrix, b: Matrix, what: str) -> None:
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"{what}: column mismatch {a.shape} vs {b.shape}")


def _check_beta(beta: float) -> float:
    if not beta > 0:
        raise DomainError(f"beta must be positive, got {beta}")
    return float(beta)


def lse(v, beta: float) -> float:
    """Smooth maximum ``beta^-1 * log(sum(exp(beta * v)))``.

    beta sits inside the exponent so that d lse / dv = softmax(beta * v).
    """
    beta = _check_beta(beta)
    x = to_vector(v, "lse input")
    return float(special.logsumexp(beta * x) / beta)


def row_lse(A: Matrix, beta: float) -> Vector:
    """lse of every row of ``A``."""
    beta = _check_beta(beta)
    return special.logsumexp(beta * np.asarray(A, dtype=np.float64), axis=1) / beta


def softmax(v) -> Vector:
    x = to_vector(v, "softmax input")
    return special.softmax(x)


def row_softmax(A: Matrix, beta: float = 1.0) -> Matrix:
    """softmax_2: softmax of ``beta * A`` along each row; rows sum to one."""
    a = np.asarray(A, dtype=np.float64)
    if a.ndim != 2 or a.size == 0:
        raise ShapeError(f"row_softmax expects a nonempty matrix, got shape {a.shape}")
    return special.softmax(beta * a, axis=1)


def row_sq_norms(K: Matrix) -> Vector:
    """Squared Euclidean norm of each row, i.e. the vector diag(K K^T)."""
    k = np.asarray(K, dtype=np.float64)
    return np.einsum("ij,ij->i", k, k)


def sq_norm_sum(K: Matrix) -> float:
    """Trace of K K^T (sum of squared entries)."""
    return float(np.sum(row_sq_norms(K)))


def scale_rows(A: Matrix, d) -> Matrix:
    """D(d) @ A without building the diagonal matrix."""
    a = np.asarray(A, dtype=np.float64)
    w = np.asarray(d, dtype=np.float64)
    if w.ndim != 1 or w.shape[0] != a.shape[0]:
        raise ShapeError(f"scale_rows: {w.shape} weights for {a.shape[0]} rows")
    return w[:, None] * a
