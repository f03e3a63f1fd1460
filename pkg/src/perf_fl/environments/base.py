"""Performative distribution maps: sampling, losses, scores, contamination.

An Environment owns everything the estimators need about one client's
model-dependent data distribution D(theta): i.i.d. sampling, per-sample loss
and gradient, the distribution parameter f(theta) with its estimator, and the
density score d log p / d f.  ContaminatedClient wraps an environment with a
Huber mixture P(theta) = (1 - eps) D(theta) + eps Q.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from ..core import ConfigurationError, make_stream


class Sample(NamedTuple):
    """One observation; is_contaminant is oracle-only and never read by estimators."""

    z: np.ndarray
    group: int | None
    is_contaminant: bool


@dataclass
class SampleBatch:
    """Column-wise batch of samples (estimators work on the arrays directly)."""

    z: np.ndarray                       # (n, z_dim)
    group: np.ndarray | None = None     # (n,) int group labels, contribution envs only
    is_contaminant: np.ndarray | None = None  # (n,) bool, evaluation/diagnostics only

    def __post_init__(self):
        self.z = np.atleast_2d(np.asarray(self.z, dtype=np.float64))
        if self.is_contaminant is None:
            self.is_contaminant = np.zeros(len(self.z), dtype=bool)

    def __len__(self) -> int:
        return self.z.shape[0]

    def __getitem__(self, j: int) -> Sample:
        return Sample(
            self.z[j],
            int(self.group[j]) if self.group is not None else None,
            bool(self.is_contaminant[j]),
        )

    def subset(self, idx: np.ndarray) -> "SampleBatch":
        return SampleBatch(
            z=self.z[idx],
            group=None if self.group is None else self.group[idx],
            is_contaminant=self.is_contaminant[idx],
        )


class Environment:
    """Abstract performative distribution map.

    Concrete environments define the attributes
      dim     -- model dimension d
      z_dim   -- sample dimension
      f_dim   -- dimension of the distribution parameter f(theta)
      dynamics -- "distribution" (theta moves component means) or
                  "contribution" (theta moves group fractions)
    and implement the methods below.  curvature_bound is an upper bound on
    ||d^2 f / d theta^2|| when known (exactly 0 for linear f); None means
    unknown and callers fall back to a finite-difference proxy.
    """

    dim: int
    z_dim: int
    f_dim: int
    dynamics: str
    curvature_bound: float | None = None

    def sample(self, theta: np.ndarray, n: int, rng: np.random.Generator) -> SampleBatch:
        raise NotImplementedError

    def loss(self, z: np.ndarray, theta: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def loss_grad(self, z: np.ndarray, theta: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def f(self, theta: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def f_hat(self, batch: SampleBatch) -> np.ndarray:
        raise NotImplementedError

    def score(self, z: np.ndarray, f_hat: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def analytic_jacobian(self, theta: np.ndarray) -> np.ndarray | None:
        return None

    def expected_loss(self, theta: np.ndarray) -> float | None:
        """Analytic E_{Z ~ D(theta)}[loss(Z; theta)] where a closed form exists."""
        return None


def estimate_f_hat(env: Environment, batch: SampleBatch) -> np.ndarray:
    """Estimate f(theta) from samples: empirical mean for distribution
    dynamics, group-frequency vector for contribution dynamics."""
    if len(batch) == 0:
        raise ConfigurationError("cannot estimate f from an empty batch")
    if env.dynamics == "contribution" and batch.group is None:
        raise ConfigurationError("contribution dynamics needs group-labeled samples")
    return env.f_hat(batch)


def strategic_response(x: np.ndarray, gamma: float, theta: np.ndarray) -> np.ndarray:
    """Best response x - gamma * theta of an agent gaming a linear score.

    Maximizer of -<x', theta> - ||x' - x||^2 / (2 gamma) over x'.
    """
    x = np.asarray(x, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    if x.shape[-1] != theta.shape[-1]:
        raise ConfigurationError("feature/model dimension mismatch in strategic response")
    return x - gamma * theta


@dataclass(frozen=True)
class GaussianContaminant:
    """Fixed contamination source Q = N(mu, sigma^2 I)."""

    mu: np.ndarray
    sigma: float

    def __post_init__(self):
        object.__setattr__(self, "mu", np.atleast_1d(np.asarray(self.mu, dtype=np.float64)))
        if self.sigma < 0:
            raise ConfigurationError("contaminant sigma must be >= 0")

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.mu + self.sigma * rng.standard_normal((n, self.mu.size))


@dataclass
class ContaminatedClient:
    """One client: environment plus Huber contamination (Q, epsilon) and weight."""

    env: Environment
    epsilon: float = 0.0
    contaminant: GaussianContaminant | None = None
    alpha: float = 1.0
    n: int = 500

    def __post_init__(self):
        if not (0.0 <= self.epsilon <= 1.0):
            raise ConfigurationError("epsilon must lie in [0, 1]")
        if self.alpha < 0:
            raise ConfigurationError("alpha must be >= 0")
        if self.epsilon > 0 and self.contaminant is None:
            raise ConfigurationError("epsilon > 0 requires a contaminant sampler")
        if self.contaminant is not None and self.contaminant.mu.size != self.env.z_dim:
            raise ConfigurationError("contaminant dimension must match the environment")

    @property
    def gamma(self) -> float:
        return float(getattr(self.env, "gamma", 0.0))


def draw_batch(
    client: ContaminatedClient,
    theta: np.ndarray,
    n: int,
    rng_draw: np.random.Generator,
    rng_mix: np.random.Generator,
    rng_cont: np.random.Generator,
) -> SampleBatch:
    """Draw n i.i.d. samples from P(theta) = (1-eps) D(theta) + eps Q.

    Contamination is a per-sample Bernoulli(eps) on its own stream; hidden
    is_contaminant flags are set truthfully for evaluation code.
    """
    if n < 1:
        raise ConfigurationError("need n >= 1 samples")
    env = client.env
    if client.epsilon <= 0.0:
        return env.sample(theta, n, rng_draw)
    mask = rng_mix.random(n) < client.epsilon
    n_bad = int(mask.sum())
    clean = env.sample(theta, max(n - n_bad, 1), rng_draw) if n_bad < n else None

    z = np.empty((n, env.z_dim))
    group = None
    if env.dynamics == "contribution":
        group = np.empty(n, dtype=np.int64)
    if clean is not None:
        z[~mask] = clean.z[: n - n_bad]
        if group is not None:
            group[~mask] = clean.group[: n - n_bad]
    if n_bad:
        z[mask] = client.contaminant.sample(n_bad, rng_cont)
        if group is not None:
            # contaminants carry an arbitrary label; the filter is expected to drop them
            group[mask] = rng_cont.integers(0, env.f_dim, size=n_bad)
    return SampleBatch(z=z, group=group, is_contaminant=mask)


def performative_loss(
    clients: list[ContaminatedClient],
    theta: np.ndarray,
    n_eval: int,
    rng: np.random.Generator | None = None,
    use_closed_form: bool = False,
) -> float:
    """Weighted performative risk sum_i alpha_i E_{Z ~ D_i(theta)}[loss(Z; theta)].

    Evaluation always uses the clean D_i(theta); contamination is a
    training-time corruption and does not enter the risk.  With
    use_closed_form=True the analytic expectation is used when every client
    environment provides one.
    """
    alphas = np.asarray([c.alpha for c in clients], dtype=np.float64)
    alphas = alphas / alphas.sum()
    if use_closed_form:
        vals = [c.env.expected_loss(theta) for c in clients]
        if all(v is not None for v in vals):
            return float(np.dot(alphas, np.asarray(vals, dtype=np.float64)))
    if rng is None:
        raise ConfigurationError("Monte-Carlo loss evaluation needs an rng")
    total = 0.0
    for alpha, client in zip(alphas, clients):
        batch = client.env.sample(theta, n_eval, rng)
        total += alpha * float(client.env.loss(batch.z, theta).mean())
    return total


def analytic_loss_available(clients: list[ContaminatedClient]) -> bool:
    probe = clients[0].env
    theta = np.zeros(probe.dim)
    return all(c.env.expected_loss(theta) is not None for c in clients)


@dataclass
class ClientStreams:
    """Per-(client, purpose) RNG streams so parallel == sequential bit-for-bit."""

    draw: np.random.Generator
    mix: np.random.Generator
    contaminant: np.random.Generator

    @classmethod
    def for_client(cls, seed: int, client_id: int) -> "ClientStreams":
        return cls(
            draw=make_stream(seed, "draw", client_id),
            mix=make_stream(seed, "mix", client_id),
            contaminant=make_stream(seed, "contaminant", client_id),
        )
