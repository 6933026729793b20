"""Small dense matrix kernel: determinants, adjugates, left pseudoinverse,
column-major vectorization.

Everything here operates on plain 2-D float ndarrays. The adjugate is the
workhorse of the regression-mixing step and must behave exactly (up to
rounding) even for singular inputs, hence cofactor expansion is used whenever
the determinant is small relative to the matrix scale.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, RankError

# Scale-aware full-rank threshold for the pseudoinverse: det(B^T B) must
# exceed RANK_TOL * ||B||_F^(2m).
RANK_TOL = 1e-12

# Relative determinant size above which adj = det * inv(Q) is accurate enough;
# below it the cofactor expansion is used (stable near singularity).
_WELL_CONDITIONED_DET = 1e-3


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate input as a finite 2-D float array and return it."""
    arr = np.asarray(a, dtype=float)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionError(f"{name} must be a non-empty 2-D array, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def as_vector(v, size: int, name: str = "vector") -> np.ndarray:
    """Validate input as a 1-D float array of the given length."""
    arr = np.asarray(v, dtype=float).ravel()
    if arr.size != size:
        raise DimensionError(f"{name} must have length {size}, got {arr.size}")
    return arr


def _square(a, op: str) -> np.ndarray:
    arr = as_matrix(a, op)
    if arr.shape[0] != arr.shape[1]:
        raise DimensionError(f"{op} requires a square matrix, got shape {arr.shape}")
    return arr


def _lu_det(q: np.ndarray) -> float:
    """Determinant by partial-pivot LU elimination.

    Same pivot rule and operation order as the compiled engine, so both
    produce bit-identical values (the mixing step gates on det != 0).
    """
    a = q.copy()
    k = a.shape[0]
    sign = 1.0
    for col in range(k):
        piv = col + int(np.argmax(np.abs(a[col:, col])))
        if a[piv, col] == 0.0:
            return 0.0
        if piv != col:
            a[[piv, col], col:] = a[[col, piv], col:]
            sign = -sign
        for r in range(col + 1, k):
            f = a[r, col] / a[col, col]
            a[r, col + 1:] -= f * a[col, col + 1:]
    out = sign
    for i in range(k):  # sequential product, same rounding as the compiled path
        out *= a[i, i]
    return float(out)


def det(q) -> float:
    """Determinant of a square matrix.

    Closed-form expansion up to 3x3, partial-pivot LU beyond. A 1x1 matrix
    returns its sole entry.
    """
    q = _square(q, "det")
    k = q.shape[0]
    if k == 1:
        return float(q[0, 0])
    if k == 2:
        return float(q[0, 0] * q[1, 1] - q[0, 1] * q[1, 0])
    if k == 3:
        return float(
            q[0, 0] * (q[1, 1] * q[2, 2] - q[1, 2] * q[2, 1])
            - q[0, 1] * (q[1, 0] * q[2, 2] - q[1, 2] * q[2, 0])
            + q[0, 2] * (q[1, 0] * q[2, 1] - q[1, 1] * q[2, 0])
        )
    return _lu_det(q)


def _adjugate_cofactor(q: np.ndarray) -> np.ndarray:
    """Adjugate by explicit cofactor expansion (any size, O(k^5))."""
    k = q.shape[0]
    adj = np.empty_like(q)
    rows = np.arange(k)
    for i in range(k):
        minor_rows = q[rows != i, :]
        for j in range(k):
            minor = minor_rows[:, rows != j]
            sign = -1.0 if (i + j) % 2 else 1.0
            adj[j, i] = sign * det(minor)
    return adj


def adjugate(q) -> np.ndarray:
    """Adjugate (transpose of the cofactor matrix): adj(Q) @ Q = det(Q) * I.

    For 1x1 the adjugate is [[1]], so the defining identity still holds.
    Dimensions up to 3 use closed-form cofactors; above that, det * inv(Q)
    when the determinant is large relative to ||Q||_F^k, cofactor expansion
    otherwise.
    """
    q = _square(q, "adjugate")
    k = q.shape[0]
    if k == 1:
        return np.array([[1.0]])
    if k == 2:
        return np.array([[q[1, 1], -q[0, 1]], [-q[1, 0], q[0, 0]]])
    if k == 3:
        return _adjugate_cofactor(q)
    d = det(q)
    scale = float(np.linalg.norm(q)) ** k
    if abs(d) > _WELL_CONDITIONED_DET * (1.0 + scale):
        return d * np.linalg.inv(q)
    return _adjugate_cofactor(q)


def left_pseudoinverse(b) -> np.ndarray:
    """Left pseudoinverse (B^T B)^-1 B^T of a full-column-rank matrix.

    Raises RankError when det(B^T B) <= RANK_TOL * ||B||_F^(2m), a
    scale-aware rank test. Computed through a QR factorization, which gives
    the same value with better conditioning.
    """
    b = as_matrix(b, "left_pseudoinverse")
    n, m = b.shape
    if m > n:
        raise RankError(f"matrix of shape {b.shape} cannot have full column rank")
    gram_det = det(b.T @ b)
    fro = float(np.linalg.norm(b))
    if not gram_det > RANK_TOL * fro ** (2 * m):
        raise RankError("matrix is rank deficient (Gram determinant below tolerance)")
    q_fac, r_fac = np.linalg.qr(b)
    return np.linalg.solve(r_fac, q_fac.T)


def vectorize(m) -> np.ndarray:
    """Stack a matrix into a 1-D vector, column-major: entry (r, c) lands at
    index c * rows + r. Inverse of unvectorize."""
    m = as_matrix(m, "vectorize")
    return m.flatten(order="F")


def unvectorize(v, rows: int, cols: int) -> np.ndarray:
    """Reshape a column-major vector back into a (rows, cols) matrix."""
    v = np.asarray(v, dtype=float).ravel()
    if v.size != rows * cols:
        raise DimensionError(f"vector of length {v.size} cannot fill a {rows}x{cols} matrix")
    return v.reshape((rows, cols), order="F")
