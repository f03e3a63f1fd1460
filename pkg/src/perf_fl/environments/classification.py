"""Binary strategic classification: agents shift features to game the model.

A sample is z = (x, y) with y in {0, 1}.  Deploying theta moves the class-y
feature cloud to mu_y - gamma_y * theta (the closed-form best response to a
linear score with quadratic manipulation cost).  The distribution parameter
f(theta) stacks the two induced class means, so the Jacobian machinery sees a
linear f with known curvature bound zero.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import ConfigurationError, RunError
from .base import Environment, SampleBatch


def _softplus(s: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, s)


def _sigmoid(s: np.ndarray) -> np.ndarray:
    out = np.empty_like(s)
    pos = s >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-s[pos]))
    es = np.exp(s[~pos])
    out[~pos] = es / (1.0 + es)
    return out


class _ShiftedClassBase(Environment):
    """Common loss/score plumbing for the two-class strategic environments."""

    gamma0: float
    gamma1: float
    ridge: float

    def _init_cls(self, dim: int, gamma0: float, gamma1: float, ridge: float):
        self.dim = dim
        self.z_dim = dim + 1
        self.f_dim = 2 * dim
        self.dynamics = "distribution"
        self.curvature_bound = 0.0  # class means are linear in theta
        self.gamma0 = float(gamma0)
        self.gamma1 = float(gamma1)
        self.ridge = float(ridge)
        if self.gamma0 < 0 or self.gamma1 < 0:
            raise ConfigurationError("manipulation budgets gamma must be >= 0")

    # subclasses provide the un-shifted class means / variances
    def base_means(self) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def class_variances(self) -> tuple[float, float]:
        raise NotImplementedError

    def split(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return z[:, : self.dim], z[:, self.dim]

    def loss(self, z, theta):
        x, y = self.split(z)
        s = x @ theta
        return _softplus(s) - y * s + 0.5 * self.ridge * float(theta @ theta)

    def loss_grad(self, z, theta):
        x, y = self.split(z)
        s = x @ theta
        return (_sigmoid(s) - y)[:, None] * x + self.ridge * theta

    def f(self, theta):
        m0, m1 = self.base_means()
        return np.concatenate([m0 - self.gamma0 * theta, m1 - self.gamma1 * theta])

    def f_hat(self, batch):
        x, y = self.split(batch.z)
        out = np.empty(self.f_dim)
        for cls in (0, 1):
            mask = y == cls
            if not mask.any():
                raise RunError(f"batch contains no samples of class {cls}")
            out[cls * self.dim:(cls + 1) * self.dim] = x[mask].mean(axis=0)
        return out

    def score(self, z, f_hat):
        x, y = self.split(z)
        v0, v1 = self.class_variances()
        out = np.zeros((len(z), self.f_dim))
        for cls, var in ((0, v0), (1, v1)):
            mask = y == cls
            block = slice(cls * self.dim, (cls + 1) * self.dim)
            out[mask, block] = (x[mask] - f_hat[block]) / var
        return out

    def analytic_jacobian(self, theta):
        eye = np.eye(self.dim)
        return np.vstack([-self.gamma0 * eye, -self.gamma1 * eye])

    def predict(self, x: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """Positive decision iff sigmoid(x . theta) >= 1/2."""
        return (x @ theta >= 0.0).astype(np.int64)


@dataclass
class StrategicClassification(_ShiftedClassBase):
    """Synthetic Gaussian classes X | Y=y ~ N(mu_y - gamma_y theta, var_y I)."""

    mu0: np.ndarray
    mu1: np.ndarray
    gamma0: float
    gamma1: float
    var0: float = 0.25
    var1: float = 0.25
    balance: float = 0.5  # P(Y = 1)
    ridge: float = 0.01

    def __post_init__(self):
        self.mu0 = np.atleast_1d(np.asarray(self.mu0, dtype=np.float64))
        self.mu1 = np.atleast_1d(np.asarray(self.mu1, dtype=np.float64))
        if self.mu0.shape != self.mu1.shape:
            raise ConfigurationError("class means must share a dimension")
        if not (0 < self.balance < 1):
            raise ConfigurationError("class balance must lie in (0, 1)")
        if self.var0 <= 0 or self.var1 <= 0:
            raise ConfigurationError("class variances must be positive")
        self._init_cls(self.mu0.size, self.gamma0, self.gamma1, self.ridge)

    def base_means(self):
        return self.mu0, self.mu1

    def class_variances(self):
        return self.var0, self.var1

    def sample(self, theta, n, rng):
        y = (rng.random(n) < self.balance).astype(np.float64)
        means = np.where(y[:, None] == 1.0,
                         (self.mu1 - self.gamma1 * theta)[None, :],
                         (self.mu0 - self.gamma0 * theta)[None, :])
        sd = np.where(y == 1.0, np.sqrt(self.var1), np.sqrt(self.var0))
        x = means + sd[:, None] * rng.standard_normal((n, self.dim))
        return SampleBatch(z=np.concatenate([x, y[:, None]], axis=1))


@dataclass
class StaticPoolClassification(_ShiftedClassBase):
    """Strategic shift applied on top of a fixed finite pool of labeled rows.

    Requesting exactly the pool size returns the whole (shifted) pool in row
    order -- the deterministic full-batch regime; smaller draws resample rows
    uniformly with replacement.
    """

    features: np.ndarray  # (m, d) base features
    labels: np.ndarray    # (m,) binary labels
    gamma0: float = 0.0
    gamma1: float = 0.0
    ridge: float = 0.01

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        self.labels = np.asarray(self.labels, dtype=np.float64).ravel()
        if self.features.shape[0] != self.labels.size:
            raise ConfigurationError("one label per feature row required")
        if not set(np.unique(self.labels)) <= {0.0, 1.0}:
            raise ConfigurationError("labels must be binary")
        self._init_cls(self.features.shape[1], self.gamma0, self.gamma1, self.ridge)
        self._mean0 = self.features[self.labels == 0].mean(axis=0)
        self._mean1 = self.features[self.labels == 1].mean(axis=0)
        self._var0 = max(float(self.features[self.labels == 0].var(axis=0).mean()), 1e-8)
        self._var1 = max(float(self.features[self.labels == 1].var(axis=0).mean()), 1e-8)

    @property
    def pool_size(self) -> int:
        return self.features.shape[0]

    def base_means(self):
        return self._mean0, self._mean1

    def class_variances(self):
        return self._var0, self._var1

    def sample(self, theta, n, rng):
        if n == self.pool_size:
            idx = np.arange(n)  # full batch: the empirical D(theta) exactly
        else:
            idx = rng.integers(0, self.pool_size, size=n)
        x = self.features[idx].copy()
        y = self.labels[idx]
        x[y == 0] -= self.gamma0 * theta
        x[y == 1] -= self.gamma1 * theta
        return SampleBatch(z=np.concatenate([x, y[:, None]], axis=1))
