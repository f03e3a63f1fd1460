"""Regression case studies: selling prices and sales that react to the model."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from ..core import ConfigurationError, RunError
from .base import Environment, SampleBatch


def _split_xy(z: np.ndarray, d: int) -> tuple[np.ndarray, np.ndarray]:
    return z[:, :d], z[:, d]


@dataclass
class HousePricingRegression(Environment):
    """Features X ~ N(mu_x, sigma_x^2 I); selling price Y = (a - gamma theta) . X + noise.

    Loss is the ridge-regularized squared error (theta . x - y)^2 + ridge ||theta||^2.
    """

    mu_x: np.ndarray
    a: np.ndarray
    gamma: float
    sigma_x: float = 1.0
    noise_sigma: float = 1.0
    ridge: float = 0.0

    def __post_init__(self):
        self.mu_x = np.atleast_1d(np.asarray(self.mu_x, dtype=np.float64))
        self.a = np.atleast_1d(np.asarray(self.a, dtype=np.float64))
        if self.mu_x.shape != self.a.shape:
            raise ConfigurationError("mu_x and a must have the same dimension")
        self.dim = self.mu_x.size
        self.z_dim = self.dim + 1
        self.f_dim = self.dim
        self.dynamics = "distribution"
        self.curvature_bound = 0.0  # f(theta) = a - gamma theta is linear
        if self.sigma_x <= 0 or self.noise_sigma <= 0:
            raise ConfigurationError("sigma_x and noise_sigma must be positive")

    def sample(self, theta, n, rng):
        x = self.mu_x + self.sigma_x * rng.standard_normal((n, self.dim))
        y = x @ self.f(theta) + self.noise_sigma * rng.standard_normal(n)
        return SampleBatch(z=np.concatenate([x, y[:, None]], axis=1))

    def loss(self, z, theta):
        x, y = _split_xy(z, self.dim)
        r = x @ theta - y
        return r * r + self.ridge * float(theta @ theta)

    def loss_grad(self, z, theta):
        x, y = _split_xy(z, self.dim)
        r = x @ theta - y
        return 2.0 * r[:, None] * x + 2.0 * self.ridge * theta

    def f(self, theta):
        return self.a - self.gamma * theta

    def f_hat(self, batch):
        # least-squares fit of the price coefficients from the batch
        x, y = _split_xy(batch.z, self.dim)
        if len(batch) < self.dim:
            raise RunError("not enough samples to fit the regression coefficients")
        coef, *_ = np.linalg.lstsq(x, y, rcond=None)
        return coef

    def score(self, z, f_hat):
        x, y = _split_xy(z, self.dim)
        resid = y - x @ f_hat
        return (resid / self.noise_sigma**2)[:, None] * x

    def analytic_jacobian(self, theta):
        return -self.gamma * np.eye(self.dim)

    def second_moment(self) -> np.ndarray:
        """E[X X^T] = sigma_x^2 I + mu_x mu_x^T."""
        return self.sigma_x**2 * np.eye(self.dim) + np.outer(self.mu_x, self.mu_x)

    def expected_loss(self, theta):
        b = (1.0 + self.gamma) * theta - self.a
        return float(b @ self.second_moment() @ b + self.noise_sigma**2
                     + self.ridge * (theta @ theta))


@dataclass
class ContributionRegression(Environment):
    """Two fixed group regressions mixed with loss-dependent fractions.

    Group k generates y = b_k . x + noise; the fraction of group k is
    (L_{-k} + c) / sum_k' (L_k' + c) with L_k the group's expected squared
    prediction error (groups suffering larger errors leave the system).
    """

    slopes: np.ndarray  # (2, d) group regression coefficients
    mu_x: np.ndarray
    sigma_x: float = 1.0
    noise_sigma: float = 2.0
    c: float = 1.0
    ridge: float = 0.0

    def __post_init__(self):
        self.slopes = np.atleast_2d(np.asarray(self.slopes, dtype=np.float64))
        self.mu_x = np.atleast_1d(np.asarray(self.mu_x, dtype=np.float64))
        if self.slopes.shape[0] != 2:
            raise ConfigurationError("contribution regression is defined for two groups")
        if self.slopes.shape[1] != self.mu_x.size:
            raise ConfigurationError("slope/feature dimension mismatch")
        self.dim = self.mu_x.size
        self.z_dim = self.dim + 1
        self.f_dim = 2
        self.dynamics = "contribution"
        self.curvature_bound = None
        if self.sigma_x <= 0 or self.noise_sigma <= 0 or self.c <= 0:
            raise ConfigurationError("sigma_x, noise_sigma and c must be positive")

    def second_moment(self) -> np.ndarray:
        return self.sigma_x**2 * np.eye(self.dim) + np.outer(self.mu_x, self.mu_x)

    def group_risk(self, theta) -> np.ndarray:
        """Expected squared prediction error per group (ridge excluded)."""
        m = self.second_moment()
        diffs = theta[None, :] - self.slopes
        return np.einsum("ki,ij,kj->k", diffs, m, diffs) + self.noise_sigma**2

    def group_risk_grad(self, theta) -> np.ndarray:
        m = self.second_moment()
        return 2.0 * (theta[None, :] - self.slopes) @ m

    def fractions(self, theta) -> np.ndarray:
        ell = self.group_risk(theta)
        total = ell.sum() + 2.0 * self.c
        return np.array([(ell[1] + self.c) / total, (ell[0] + self.c) / total])

    def sample(self, theta, n, rng):
        nu = self.fractions(theta)
        group = rng.choice(2, size=n, p=nu)
        x = self.mu_x + self.sigma_x * rng.standard_normal((n, self.dim))
        y = np.einsum("nd,nd->n", x, self.slopes[group]) \
            + self.noise_sigma * rng.standard_normal(n)
        return SampleBatch(z=np.concatenate([x, y[:, None]], axis=1), group=group)

    def loss(self, z, theta):
        x, y = _split_xy(z, self.dim)
        r = x @ theta - y
        return r * r + self.ridge * float(theta @ theta)

    def loss_grad(self, z, theta):
        x, y = _split_xy(z, self.dim)
        r = x @ theta - y
        return 2.0 * r[:, None] * x + 2.0 * self.ridge * theta

    def f(self, theta):
        return self.fractions(theta)

    def f_hat(self, batch):
        if batch.group is None:
            raise ConfigurationError("contribution dynamics needs group labels")
        counts = np.bincount(batch.group, minlength=2)
        return counts / counts.sum()

    def score(self, z, f_hat):
        # conditional group densities p_k(y | x); the shared p(x) cancels
        x, y = _split_xy(z, self.dim)
        resid = y[:, None] - x @ self.slopes.T  # (n, 2)
        log_p = -0.5 * (resid / self.noise_sigma) ** 2 \
            - 0.5 * np.log(2.0 * np.pi * self.noise_sigma**2)
        with np.errstate(divide="ignore"):
            log_nu = np.log(np.asarray(f_hat, dtype=np.float64))
        log_denom = logsumexp(log_p + log_nu, axis=1)
        out = np.exp(log_p - log_denom[:, None])
        out[~np.isfinite(log_denom)] = np.nan
        return out

    def analytic_jacobian(self, theta):
        ell = self.group_risk(theta)
        grads = self.group_risk_grad(theta)  # (2, d)
        total = ell.sum() + 2.0 * self.c
        d_total = grads.sum(axis=0)
        d_nu1 = (grads[1] * total - (ell[1] + self.c) * d_total) / total**2
        return np.stack([d_nu1, -d_nu1], axis=0)

    def expected_loss(self, theta):
        nu = self.fractions(theta)
        return float(nu @ self.group_risk(theta) + self.ridge * (theta @ theta))
