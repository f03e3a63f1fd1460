"""From raw samples to an update direction.

Covers the full estimation chain: the plain loss-gradient term, the
finite-difference Jacobian of the distribution parameter over a history
window, the distribution-shift correction term, the iterative SVD outlier
filter, server-side Jacobian averaging, and adaptive sample sizing.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from ._kernels import robust_filter_indices
from .core import ConfigurationError, NumericError
from .environments.base import Environment, SampleBatch
from .linalg import default_rank_tol, pseudo_inverse


class JacobianSource(Enum):
    LOCAL = "local"
    SERVER_CLUSTER = "server_cluster"


@dataclass
class HistoryWindow:
    """Ring buffer of the H most recent (theta, f_hat) pairs plus the current one."""

    H: int
    _theta: deque = field(init=False)
    _f: deque = field(init=False)

    def __post_init__(self):
        if self.H < 1:
            raise ConfigurationError("history window needs H >= 1")
        self._theta = deque(maxlen=self.H + 1)
        self._f = deque(maxlen=self.H + 1)

    def push(self, theta: np.ndarray, f_hat: np.ndarray) -> None:
        self._theta.append(np.asarray(theta, dtype=np.float64).copy())
        self._f.append(np.asarray(f_hat, dtype=np.float64).copy())

    def __len__(self) -> int:
        return len(self._theta)

    @property
    def full(self) -> bool:
        return len(self._theta) == self.H + 1

    def stacked(self) -> tuple[np.ndarray, np.ndarray]:
        """((H+1) x d thetas, (H+1) x f_dim f_hats), oldest first."""
        if not self.full:
            raise ConfigurationError("history window not full yet")
        return np.stack(tuple(self._theta)), np.stack(tuple(self._f))

    def deltas(self) -> tuple[np.ndarray, np.ndarray]:
        """(d x H, f_dim x H) difference matrices against the current pair."""
        thetas, fs = self.stacked()
        d_theta = (thetas[:-1] - thetas[-1]).T
        d_f = (fs[:-1] - fs[-1]).T
        return d_theta, d_f


@dataclass
class JacobianEstimate:
    """Finite-difference estimate of df/dtheta with rank diagnostics."""

    matrix: np.ndarray
    min_singular_value: float
    source: JacobianSource = JacobianSource.LOCAL
    rank_deficient: bool = False
    degenerate: bool = False
    dtheta_norm: float = 0.0  # largest singular value of the step matrix

    @property
    def usable(self) -> bool:
        return not (self.rank_deficient or self.degenerate)


def _jacobian_from_deltas(d_theta: np.ndarray, d_f: np.ndarray,
                          rank_tol: float | None,
                          source: JacobianSource) -> JacobianEstimate:
    if rank_tol is None:
        rank_tol = default_rank_tol(d_theta.shape)
    try:
        u, s, vt = np.linalg.svd(d_theta, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"SVD of the step matrix failed: {exc}") from exc
    s_max = float(s[0]) if s.size else 0.0
    if s_max <= 0.0:
        return JacobianEstimate(
            matrix=np.zeros((d_f.shape[0], d_theta.shape[0])),
            min_singular_value=0.0, source=source, degenerate=True,
        )
    keep = s > rank_tol * s_max
    deficient = not bool(keep.all())
    s_inv = np.where(keep, 1.0 / np.where(keep, s, 1.0), 0.0)
    pinv = (vt.T * s_inv) @ u.T
    jac = d_f @ pinv
    if not np.all(np.isfinite(jac)):
        raise NumericError("non-finite finite-difference Jacobian")
    return JacobianEstimate(
        matrix=jac,
        min_singular_value=float(s[keep][-1]),
        source=source,
        rank_deficient=deficient,
        dtheta_norm=s_max,
    )


def fd_jacobian(window: HistoryWindow, rank_tol: float | None = None,
                source: JacobianSource = JacobianSource.LOCAL) -> JacobianEstimate:
    """Estimate df/dtheta as Delta_f . pinv(Delta_theta) over the window.

    An all-identical history yields a zero Jacobian flagged degenerate; a
    numerically rank-deficient step matrix flags the estimate so the caller
    can fall back to the plain gradient term for that step.
    """
    d_theta, d_f = window.deltas()
    return _jacobian_from_deltas(d_theta, d_f, rank_tol, source)


def server_jacobian(windows: list[HistoryWindow], rank_tol: float | None = None) -> JacobianEstimate:
    """Cluster-level Jacobian: average (theta, f_hat) histories slot-wise,
    then run the finite-difference estimator on the averaged window."""
    if not windows:
        raise ConfigurationError("server_jacobian needs at least one window")
    if not all(w.full for w in windows):
        raise ConfigurationError("all cluster windows must be full")
    first_t, first_f = windows[0].stacked()
    sum_t, sum_f = first_t.copy(), first_f.copy()
    for w in windows[1:]:
        tw, fw = w.stacked()
        if tw.shape != first_t.shape or fw.shape != first_f.shape:
            raise ConfigurationError("cluster members must share dimensions and window size")
        sum_t += tw
        sum_f += fw
    avg_t = sum_t / len(windows)
    avg_f = sum_f / len(windows)
    d_theta = (avg_t[:-1] - avg_t[-1]).T
    d_f = (avg_f[:-1] - avg_f[-1]).T
    return _jacobian_from_deltas(d_theta, d_f, rank_tol, JacobianSource.SERVER_CLUSTER)


# ---------------------------------------------------------------------------
# gradient terms
# ---------------------------------------------------------------------------

@dataclass
class GradientEstimate:
    """Assembled local update direction g = g1 + g2 with diagnostics."""

    g1: np.ndarray
    g2: np.ndarray | None
    loss_mean: float
    n_used: int
    n_removed: int

    @property
    def direction(self) -> np.ndarray:
        if self.g2 is None:
            return self.g1
        return self.g1 + self.g2


def grad_l1(batch: SampleBatch, theta: np.ndarray, env: Environment) -> tuple[np.ndarray, float]:
    """Plain term: mean per-sample loss gradient, plus the mean loss."""
    if len(batch) == 0:
        raise ConfigurationError("grad_l1 needs a nonempty batch")
    g1 = env.loss_grad(batch.z, theta).mean(axis=0)
    loss_mean = float(env.loss(batch.z, theta).mean())
    return g1, loss_mean


def grad_l2(batch: SampleBatch, theta: np.ndarray, env: Environment,
            jac: JacobianEstimate, f_hat: np.ndarray) -> np.ndarray:
    """Distribution-shift term: (1/n) sum_j loss_j * jac^T score_j.

    Samples whose mixture score is undefined (zero total density even in log
    space) are excluded from the average.
    """
    if len(batch) == 0:
        raise ConfigurationError("grad_l2 needs a nonempty batch")
    if jac.matrix.shape != (env.f_dim, env.dim):
        raise ConfigurationError(
            f"Jacobian shape {jac.matrix.shape} incompatible with env ({env.f_dim}, {env.dim})"
        )
    scores = env.score(batch.z, f_hat)
    weights = scores @ jac.matrix  # (n, d) per-sample weight vectors
    losses = env.loss(batch.z, theta)
    valid = np.all(np.isfinite(weights), axis=1)
    if not valid.all():
        weights = weights[valid]
        losses = losses[valid]
        if weights.shape[0] == 0:
            return np.zeros(env.dim)
    return (losses[:, None] * weights).mean(axis=0)


def robust_gradient(batch: SampleBatch, theta: np.ndarray, env: Environment,
                    C: float, J: float, B: int) -> tuple[SampleBatch, np.ndarray, float, int]:
    """Outlier-robust plain gradient via the iterative SVD score filter.

    Returns (surviving samples, their mean gradient, their mean loss, number
    removed).  Batches of fewer than two samples pass through unfiltered; the
    filter never keeps fewer than ceil(n/2) samples.
    """
    if not (0 < C < 1) or not (0 < J < 1):
        raise ConfigurationError("C and J must lie in (0, 1)")
    if B < 2:
        raise ConfigurationError("need B >= 2 histogram segments")
    n = len(batch)
    grads = env.loss_grad(batch.z, theta)
    losses = env.loss(batch.z, theta)
    if n < 2:
        return batch, grads.mean(axis=0), float(losses.mean()), 0
    kept = robust_filter_indices(np.ascontiguousarray(grads, dtype=np.float64),
                                 float(C), float(J), int(B))
    removed = n - kept.size
    if removed == 0:
        return batch, grads.mean(axis=0), float(losses.mean()), 0
    sub = batch.subset(kept)
    return sub, grads[kept].mean(axis=0), float(losses[kept].mean()), int(removed)


# ---------------------------------------------------------------------------
# adaptive sample size
# ---------------------------------------------------------------------------

@dataclass
class AdaptiveSizerState:
    """Running proxies for the constants in the sample-size lower bound.

    ell_max mirrors the previous iteration's mean loss; F_hat the norm of the
    current Jacobian estimate; G_hat the largest per-sample gradient norm in
    the last batch; M_hat the curvature bound of f (the environment's analytic
    bound when known, otherwise a finite-difference proxy across updates);
    sigma2_hat the per-client sample variance.
    """

    phi: float
    Phi: float
    n_min: int
    n_max: int
    ell_max: float = 0.0
    F_hat: float = 0.0
    G_hat: float = 0.0
    M_hat: float = 0.0
    sigma2_hat: float = 0.0
    _prev_jac: np.ndarray | None = None
    _prev_theta: np.ndarray | None = None

    def __post_init__(self):
        if not (0 < self.phi < 1):
            raise ConfigurationError("phi must lie in (0, 1)")
        if self.Phi <= 0:
            raise ConfigurationError("Phi must be positive")
        if not (1 <= self.n_min <= self.n_max):
            raise ConfigurationError("need 1 <= n_min <= n_max")

    def observe(self, batch: SampleBatch, loss_mean: float, jac: JacobianEstimate,
                theta: np.ndarray, env: Environment) -> None:
        """Refresh the running constants after one local step."""
        self.ell_max = float(loss_mean)
        self.F_hat = float(np.linalg.norm(jac.matrix))
        grads = env.loss_grad(batch.z, theta)
        self.G_hat = float(np.sqrt((grads * grads).sum(axis=1).max()))
        self.sigma2_hat = float(batch.z.var(axis=0).mean())
        if env.curvature_bound is not None:
            self.M_hat = float(env.curvature_bound)
        elif self._prev_jac is not None and self._prev_theta is not None:
            step = float(np.linalg.norm(theta - self._prev_theta))
            if step > 1e-12:
                self.M_hat = float(np.linalg.norm(jac.matrix - self._prev_jac) / step)
        self._prev_jac = jac.matrix.copy()
        self._prev_theta = np.asarray(theta, dtype=np.float64).copy()


def adaptive_sample_size(state: AdaptiveSizerState, H: int, eta: float,
                         delta_theta_norm: float) -> int:
    """Sample-size lower bound, clamped into [n_min, n_max].

    n >= 2 (2 l_max^2 H ||dtheta||^-2 + F^2) sigma^2 log(2/phi)
         / (2 Phi - M^2 eta^2 G^4 H^6 ||dtheta||^2 l_max^2).
    A non-positive denominator means the requested error bound is unattainable
    and the maximum sample size is used.
    """
    ell_sq = state.ell_max**2
    denom = 2.0 * state.Phi - (state.M_hat**2) * (eta**2) * (state.G_hat**4) \
        * float(H) ** 6 * (delta_theta_norm**2) * ell_sq
    if not np.isfinite(denom) or denom <= 0.0:
        return state.n_max
    if delta_theta_norm <= 0.0:
        return state.n_max  # degenerate window: fall into the clamp path
    numer = 2.0 * (2.0 * ell_sq * H / (delta_theta_norm**2) + state.F_hat**2) \
        * state.sigma2_hat * math.log(2.0 / state.phi)
    if not np.isfinite(numer):
        return state.n_max
    n = math.ceil(numer / denom)
    return int(min(max(n, state.n_min), state.n_max))
