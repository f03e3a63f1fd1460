"""Numba-compiled twin of the filter kernel (default backend).

Mirrors np_backend.robust_filter_indices step for step; kept separate so the
pure-numpy path stays importable without numba.
"""
from __future__ import annotations

import numpy as np
from numba import njit

DEGENERATE_TAU = 1e-12


@njit(cache=True)
def robust_filter_indices(grads: np.ndarray, C: float, J: float, B: int) -> np.ndarray:
    n0 = grads.shape[0]
    d = grads.shape[1]
    idx = np.arange(n0)
    if n0 < 2:
        return idx
    min_keep = (n0 + 1) // 2
    while True:
        m = idx.shape[0]
        sub = np.empty((m, d))
        for j in range(m):
            sub[j] = grads[idx[j]]
        mean = np.zeros(d)
        for j in range(m):
            mean += sub[j]
        mean /= m
        centered = sub - mean
        _, s, vt = np.linalg.svd(centered, full_matrices=False)
        if s.shape[0] == 0 or s[0] <= 0.0:
            break
        v = vt[0]
        tau = np.empty(m)
        tau_max = 0.0
        for j in range(m):
            p = 0.0
            for k in range(d):
                p += centered[j, k] * v[k]
            tau[j] = p * p
            if tau[j] > tau_max:
                tau_max = tau[j]
        if tau_max < DEGENERATE_TAU:
            break
        width = tau_max / B
        counts = np.zeros(B, dtype=np.int64)
        for j in range(m):
            b = int(tau[j] / width)
            if b >= B:
                b = B - 1
            counts[b] += 1
        ksel = -1
        for b in range(B):
            if counts[b] < C * m:
                ksel = b
                break
        if ksel < 0:
            break
        phi = ksel * width
        keep = tau < phi
        n_keep = 0
        for j in range(m):
            if keep[j]:
                n_keep += 1
        if n_keep == 0:
            break
        hit_half = 2 * n_keep <= n0
        if n_keep < min_keep:
            order = np.argsort(tau)
            keep = np.zeros(m, dtype=np.bool_)
            for j in range(min_keep):
                keep[order[j]] = True
            n_keep = min_keep
        new_mean = np.zeros(d)
        for j in range(m):
            if keep[j]:
                new_mean += sub[j]
        new_mean /= n_keep
        base = 0.0
        diff_sq = 0.0
        for k in range(d):
            base += mean[k] * mean[k]
            dk = mean[k] - new_mean[k]
            diff_sq += dk * dk
        base = np.sqrt(base)
        rel = np.sqrt(diff_sq) / base if base > 0 else 0.0
        new_idx = np.empty(n_keep, dtype=idx.dtype)
        pos = 0
        for j in range(m):
            if keep[j]:
                new_idx[pos] = idx[j]
                pos += 1
        new_idx.sort()
        idx = new_idx
        if rel < J or hit_half or base == 0.0:
            break
    return idx
