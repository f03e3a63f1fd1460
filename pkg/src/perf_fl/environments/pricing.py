"""Pricing case studies: demand that reacts to prices.

Losses are the negated revenue -theta . z, so minimizing the performative
risk maximizes expected revenue.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from ..core import ConfigurationError, RunError
from .base import Environment, SampleBatch


@dataclass
class GaussianDemandPricing(Environment):
    """Demand Z ~ N(mu0 - gamma * theta, sigma^2 I): means drop linearly in price."""

    mu0: np.ndarray
    gamma: float
    sigma: float = 1.0

    def __post_init__(self):
        self.mu0 = np.atleast_1d(np.asarray(self.mu0, dtype=np.float64))
        self.dim = self.mu0.size
        self.z_dim = self.dim
        self.f_dim = self.dim
        self.dynamics = "distribution"
        self.curvature_bound = 0.0  # f is linear in theta
        if self.sigma <= 0:
            raise ConfigurationError("sigma must be positive")

    def sample(self, theta, n, rng):
        mean = self.f(theta)
        z = mean + self.sigma * rng.standard_normal((n, self.z_dim))
        return SampleBatch(z=z)

    def loss(self, z, theta):
        return -(z @ theta)

    def loss_grad(self, z, theta):
        return -z

    def f(self, theta):
        return self.mu0 - self.gamma * theta

    def f_hat(self, batch):
        return batch.z.mean(axis=0)

    def score(self, z, f_hat):
        return (z - f_hat) / (self.sigma**2)

    def analytic_jacobian(self, theta):
        return -self.gamma * np.eye(self.dim)

    def expected_loss(self, theta):
        return float(-(theta @ self.f(theta)))


class _GaussianGroupMixture(Environment):
    """Shared machinery for contribution dynamics over fixed Gaussian groups.

    Subclasses define fractions(theta) -> (K,) and fraction_jacobian(theta)
    -> (K, d); the group distributions N(mu_k, sigma^2 I) stay fixed.
    """

    group_means: np.ndarray  # (K, d)
    sigma: float

    def _init_mixture(self, group_means, sigma):
        self.group_means = np.atleast_2d(np.asarray(group_means, dtype=np.float64))
        self.sigma = float(sigma)
        if self.sigma <= 0:
            raise ConfigurationError("sigma must be positive")
        self.num_groups, self.dim = self.group_means.shape
        self.z_dim = self.dim
        self.f_dim = self.num_groups
        self.dynamics = "contribution"

    def fractions(self, theta) -> np.ndarray:
        raise NotImplementedError

    def fraction_jacobian(self, theta) -> np.ndarray:
        raise NotImplementedError

    def sample(self, theta, n, rng):
        nu = self.fractions(theta)
        group = rng.choice(self.num_groups, size=n, p=nu)
        z = self.group_means[group] + self.sigma * rng.standard_normal((n, self.z_dim))
        return SampleBatch(z=z, group=group)

    def loss(self, z, theta):
        return -(z @ theta)

    def loss_grad(self, z, theta):
        return -z

    def f(self, theta):
        return self.fractions(theta)

    def f_hat(self, batch):
        if batch.group is None:
            raise ConfigurationError("contribution dynamics needs group labels")
        counts = np.bincount(batch.group, minlength=self.num_groups)
        return counts / counts.sum()

    def group_log_density(self, z) -> np.ndarray:
        """(n, K) log N(z; mu_k, sigma^2 I) per group."""
        diff = z[:, None, :] - self.group_means[None, :, :]
        sq = np.sum(diff * diff, axis=2)
        const = 0.5 * self.z_dim * np.log(2.0 * np.pi * self.sigma**2)
        return -0.5 * sq / self.sigma**2 - const

    def score(self, z, f_hat):
        # d log(sum_k nu_k p_k) / d nu_k = p_k / sum_j nu_j p_j, in log space
        log_p = self.group_log_density(z)
        with np.errstate(divide="ignore"):
            log_nu = np.log(np.asarray(f_hat, dtype=np.float64))
        log_denom = logsumexp(log_p + log_nu, axis=1)
        out = np.exp(log_p - log_denom[:, None])
        out[~np.isfinite(log_denom)] = np.nan  # zero total density: caller excludes
        return out

    def analytic_jacobian(self, theta):
        return self.fraction_jacobian(theta)

    def mixture_mean(self, theta) -> np.ndarray:
        return self.fractions(theta) @ self.group_means

    def expected_loss(self, theta):
        return float(-(theta @ self.mixture_mean(theta)))


@dataclass
class ContributionPricing(_GaussianGroupMixture):
    """Groups with more remaining budget stay: nu_k ~ B - E[theta . Z_k].

    Remaining budgets are clamped at zero from below so fractions stay inside
    [0, 1]; a price vector exhausting every group's budget is a run error.
    """

    group_means: np.ndarray
    sigma: float = 0.5
    budget: float = 10.0

    def __post_init__(self):
        self._init_mixture(self.group_means, self.sigma)
        self.curvature_bound = None  # ratio of affines: genuinely non-linear
        if self.budget <= 0:
            raise ConfigurationError("budget must be positive")

    def _remaining(self, theta) -> np.ndarray:
        return np.maximum(self.budget - self.group_means @ theta, 0.0)

    def fractions(self, theta):
        r = self._remaining(theta)
        total = r.sum()
        if total <= 0:
            raise RunError("all group budgets exhausted at this price point")
        return r / total

    def fraction_jacobian(self, theta):
        r = self._remaining(theta)
        total = r.sum()
        if total <= 0:
            raise RunError("all group budgets exhausted at this price point")
        dr = np.where((r > 0)[:, None], -self.group_means, 0.0)  # (K, d)
        d_total = dr.sum(axis=0)
        return (dr * total - r[:, None] * d_total[None, :]) / total**2


@dataclass
class AppendixLinearContribution(_GaussianGroupMixture):
    """Two fixed scalar groups N(a1, sigma^2), N(a2, sigma^2) with a fraction
    linear in theta.

    The fraction of group 1 is nu_1(theta) = 1/2 - slope * theta, which makes
    the performative risk strictly convex for a1 > a2 and yields the closed
    forms theta_po = (a1 + a2) / (2 (a1 - a2)) and
    theta_ps = (a1 + a2) / (a1 - a2).
    """

    a1: float = 0.5
    a2: float = -0.5
    sigma: float = 0.5
    slope: float = 0.5

    def __post_init__(self):
        self._init_mixture(np.array([[self.a1], [self.a2]]), self.sigma)
        self.curvature_bound = 0.0  # fractions are linear in theta
        if self.slope <= 0:
            raise ConfigurationError("slope must be positive")

    def fractions(self, theta):
        nu1 = float(np.clip(0.5 - self.slope * theta[0], 0.0, 1.0))
        return np.array([nu1, 1.0 - nu1])

    def fraction_jacobian(self, theta):
        nu1 = 0.5 - self.slope * theta[0]
        if not (0.0 < nu1 < 1.0):
            return np.zeros((2, 1))  # clamped: fractions locally constant
        return np.array([[-self.slope], [self.slope]])
