"""Dense symmetric linear algebra kernels.

Matrices handled here are small (at most N+1 on a side), so everything is
dense and delegated to LAPACK through numpy/scipy.
"""
from __future__ import annotations

import numpy as np
import scipy.linalg

PIVOT_RTOL = 1e-12


class NotPositiveDefinite(np.linalg.LinAlgError):
    """Raised when a Cholesky pivot falls below the relative tolerance."""


def as_symmetric(a) -> np.ndarray:
    """Return a float copy of ``a`` with the lower triangle mirrored upward."""
    a = np.array(a, dtype=float, copy=True)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise ValueError(f"expected a nonempty square matrix, got shape {a.shape}")
    return np.tril(a) + np.tril(a, -1).T


def cholesky(a) -> np.ndarray:
    """Lower-triangular factor L with L @ L.T == a.

    Raises NotPositiveDefinite when a pivot is below 1e-12 times the
    largest diagonal entry.
    """
    a = as_symmetric(a)
    scale = float(np.max(np.diag(a)))
    if not scale > 0.0:
        raise NotPositiveDefinite("largest diagonal entry is not positive")
    try:
        factor = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None
    pivots = np.diag(factor) ** 2
    if np.any(pivots < PIVOT_RTOL * scale):
        raise NotPositiveDefinite(
            f"pivot {pivots.min():.3e} below {PIVOT_RTOL:.0e} * {scale:.3e}"
        )
    return factor


def solve_posdef(a, b) -> np.ndarray:
    factor = cholesky(a)
    return scipy.linalg.cho_solve((factor, True), np.asarray(b, dtype=float))


def min_eigenvalue(a) -> float:
    return float(np.linalg.eigvalsh(as_symmetric(a))[0])


def svec(m) -> np.ndarray:
    """Pack the lower triangle column by column, off-diagonals scaled by sqrt(2).

    With this scaling ``svec(A) @ svec(B) == np.sum(A * B)`` for symmetric A, B.
    """
    m = np.asarray(m, dtype=float)
    d = m.shape[0]
    rows, cols = svec_indices(d)
    out = m[rows, cols].copy()
    out[rows != cols] *= np.sqrt(2.0)
    return out


def smat(v) -> np.ndarray:
    """Inverse of :func:`svec`."""
    v = np.asarray(v, dtype=float)
    d = svec_dim_to_side(v.size)
    rows, cols = svec_indices(d)
    vals = v.copy()
    vals[rows != cols] /= np.sqrt(2.0)
    m = np.zeros((d, d))
    m[rows, cols] = vals
    m[cols, rows] = vals
    return m


def svec_indices(d: int) -> tuple[np.ndarray, np.ndarray]:
    """Row and column index arrays of the packed lower triangle (column-major)."""
    cols, rows = np.triu_indices(d)
    return rows, cols


def svec_position(d: int, i: int, j: int) -> int:
    """Position of entry (i, j) of a d x d matrix inside its svec."""
    if i < j:
        i, j = j, i
    return j * d - j * (j - 1) // 2 + (i - j)


def svec_dim_to_side(n: int) -> int:
    d = int(round((np.sqrt(8 * n + 1) - 1) / 2))
    if d * (d + 1) // 2 != n:
        raise ValueError(f"{n} is not a triangular number")
    return d
