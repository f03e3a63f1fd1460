"""Closed-form performative optimal / stable points for the analytic cases.

The formulas cover weighted multi-client versions of the environments whose
risks are quadratic in theta; everything else returns None ("no closed form")
and callers fall back to `numeric_performative_optimum`, which minimizes the
analytic expected loss directly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize

from ..core import ConfigurationError, ParameterBox
from .base import ContaminatedClient
from .pricing import AppendixLinearContribution, GaussianDemandPricing
from .regression import HousePricingRegression


@dataclass(frozen=True)
class ClosedFormOptima:
    theta_po: np.ndarray
    theta_ps: np.ndarray


def _weights(clients: list[ContaminatedClient]) -> np.ndarray:
    alpha = np.asarray([c.alpha for c in clients], dtype=np.float64)
    return alpha / alpha.sum()


def closed_form_optima(clients: list[ContaminatedClient]) -> ClosedFormOptima | None:
    """Weighted closed forms, or None when the environment family has none."""
    envs = [c.env for c in clients]
    alpha = _weights(clients)

    if all(isinstance(e, GaussianDemandPricing) for e in envs):
        # L(theta) = -theta . mu_bar + gamma_bar ||theta||^2
        mu_bar = np.einsum("i,ij->j", alpha, np.stack([e.mu0 for e in envs]))
        gamma_bar = float(np.dot(alpha, [e.gamma for e in envs]))
        if gamma_bar <= 0:
            return None  # static data: risk linear in theta, no interior optimum
        return ClosedFormOptima(theta_po=mu_bar / (2.0 * gamma_bar),
                                theta_ps=mu_bar / gamma_bar)

    if all(isinstance(e, AppendixLinearContribution) for e in envs):
        num = float(np.dot(alpha, [e.a1 + e.a2 for e in envs]))
        den = float(np.dot(alpha, [e.a1 - e.a2 for e in envs]))
        if den <= 0:
            return None
        return ClosedFormOptima(theta_po=np.array([num / (2.0 * den)]),
                                theta_ps=np.array([num / den]))

    if all(isinstance(e, HousePricingRegression) for e in envs):
        ref = envs[0]
        same = all(
            np.array_equal(e.mu_x, ref.mu_x) and np.array_equal(e.a, ref.a)
            and e.sigma_x == ref.sigma_x and e.ridge == ref.ridge
            for e in envs
        )
        if not same:
            return None
        m = ref.second_moment()
        lam = ref.ridge
        gammas = np.asarray([e.gamma for e in envs])
        g_bar = float(np.dot(alpha, gammas))
        g2_bar = float(np.dot(alpha, (1.0 + gammas) ** 2))
        eye = np.eye(ref.dim)
        # stationarity of sum_i alpha_i [((1+g_i)theta - a)' M ((1+g_i)theta - a) + lam theta'theta]
        theta_po = np.linalg.solve(g2_bar * m + lam * eye, (1.0 + g_bar) * (m @ ref.a))
        # fixed point of the decoupled gradient 2M(theta(1+g_bar) - a) + 2 lam theta = 0
        theta_ps = np.linalg.solve((1.0 + g_bar) * m + lam * eye, m @ ref.a)
        return ClosedFormOptima(theta_po=theta_po, theta_ps=theta_ps)

    return None


def numeric_performative_optimum(
    clients: list[ContaminatedClient],
    box: ParameterBox,
    grid_points: int = 4001,
) -> np.ndarray:
    """Minimize the analytic weighted performative risk over the box.

    Independent oracle for environments without a closed form; requires every
    client environment to expose expected_loss.
    """
    alpha = _weights(clients)

    def risk(theta: np.ndarray) -> float:
        vals = [c.env.expected_loss(theta) for c in clients]
        if any(v is None for v in vals):
            raise ConfigurationError("numeric optimum needs analytic expected_loss")
        return float(np.dot(alpha, vals))

    if box.dim == 1:
        grid = np.linspace(box.lower[0], box.upper[0], grid_points)
        vals = np.array([risk(np.array([g])) for g in grid])
        k = int(vals.argmin())
        lo = grid[max(k - 1, 0)]
        hi = grid[min(k + 1, grid_points - 1)]
        res = optimize.minimize_scalar(lambda t: risk(np.array([t])),
                                       bounds=(lo, hi), method="bounded",
                                       options={"xatol": 1e-12})
        return np.array([res.x])

    rng = np.random.default_rng(0)
    starts = rng.uniform(box.lower, box.upper, size=(16, box.dim))
    best, best_val = None, np.inf
    for x0 in starts:
        res = optimize.minimize(risk, x0, method="L-BFGS-B",
                                bounds=list(zip(box.lower, box.upper)))
        if res.fun < best_val:
            best, best_val = res.x, res.fun
    return np.asarray(best)
