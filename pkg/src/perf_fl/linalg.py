"""Small dense matrix kernels for the gradient estimators.

Problem sizes here are tiny (at most ~thousands of rows, tens of columns), so
everything is backed by LAPACK through numpy's SVD.
"""
from __future__ import annotations

import numpy as np

from .core import NumericError


def default_rank_tol(shape: tuple[int, int]) -> float:
    """Relative singular-value cutoff: 1e-10 scaled by the larger dimension."""
    return 1e-10 * max(shape)


def _svd(a: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    try:
        return np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericError(
            f"SVD failed for matrix of shape {a.shape} "
            f"(fro norm {np.linalg.norm(a):.3e}, finite={np.all(np.isfinite(a))})"
        ) from exc


def pseudo_inverse(a: np.ndarray, rank_tol: float | None = None) -> np.ndarray:
    """Moore-Penrose pseudo-inverse, zeroing singular values <= rank_tol * s_max."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise NumericError(f"pseudo_inverse expects a matrix, got shape {a.shape}")
    if rank_tol is None:
        rank_tol = default_rank_tol(a.shape)
    if rank_tol < 0:
        raise NumericError("rank_tol must be >= 0")
    u, s, vt = _svd(a)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((a.shape[1], a.shape[0]))
    keep = s > rank_tol * s[0]
    s_inv = np.where(keep, 1.0 / np.where(keep, s, 1.0), 0.0)
    return (vt.T * s_inv) @ u.T


def top_right_singular_vector(a: np.ndarray) -> np.ndarray | None:
    """Unit right singular vector of the largest singular value, or None.

    Returns None for an (all-zero) degenerate matrix so callers can skip
    direction-based filtering.  The sign is canonicalized so the first
    component of non-negligible magnitude is positive; downstream outlier
    scores square the projection and are sign-invariant anyway.  Ties between
    equal singular values resolve to the lowest-index vector LAPACK reports.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] < 1:
        raise NumericError(f"need a matrix with >= 1 column, got shape {a.shape}")
    _, s, vt = _svd(a)
    if s.size == 0 or s[0] <= 0.0:
        return None
    v = vt[0].copy()
    nz = np.flatnonzero(np.abs(v) > 1e-12 * np.abs(v).max())
    if nz.size and v[nz[0]] < 0:
        v = -v
    return v
