"""Pure-numpy implementation of the hot filter kernel (fallback backend)."""
from __future__ import annotations

import numpy as np

DEGENERATE_TAU = 1e-12


def robust_filter_indices(grads: np.ndarray, C: float, J: float, B: int) -> np.ndarray:
    """Iterative SVD outlier filter; returns the kept row indices (sorted).

    Each pass centers the gradients, projects onto the top right singular
    direction, squares the projections into outlier scores tau, and drops the
    scores at or above the lower edge of the first histogram segment whose
    count falls below C * |S|.  Stops when the mean gradient moves by less
    than J (relative) or the kept set would reach half the original size; in
    the latter case the removal is clipped so at least ceil(n/2) samples
    survive.
    """
    n0 = grads.shape[0]
    idx = np.arange(n0, dtype=np.int64)
    if n0 < 2:
        return idx
    min_keep = (n0 + 1) // 2
    while True:
        sub = grads[idx]
        m = sub.shape[0]
        mean = sub.sum(axis=0) / m
        centered = sub - mean
        try:
            s = np.linalg.svd(centered, full_matrices=False, compute_uv=False)
        except np.linalg.LinAlgError:
            break
        if s.size == 0 or s[0] <= 0.0:
            break
        _, _, vt = np.linalg.svd(centered, full_matrices=False)
        v = vt[0]
        proj = centered @ v
        tau = proj * proj
        tau_max = tau.max()
        if tau_max < DEGENERATE_TAU:
            break
        width = tau_max / B
        bins = np.minimum((tau / width).astype(np.int64), B - 1)
        counts = np.bincount(bins, minlength=B)
        below = np.flatnonzero(counts < C * m)
        if below.size == 0:
            break
        phi = below[0] * width
        keep = tau < phi
        n_keep = int(keep.sum())
        if n_keep == 0:
            break
        hit_half = 2 * n_keep <= n0
        if n_keep < min_keep:
            order = np.argsort(tau, kind="stable")[:min_keep]
            keep = np.zeros(m, dtype=bool)
            keep[order] = True
            n_keep = min_keep
        new_mean = sub[keep].sum(axis=0) / n_keep
        base = np.sqrt(float(np.dot(mean, mean)))
        diff = mean - new_mean
        rel = np.sqrt(float(np.dot(diff, diff))) / base if base > 0 else 0.0
        idx = idx[keep]
        idx.sort()
        if rel < J or hit_half or base == 0.0:
            break
    return idx
