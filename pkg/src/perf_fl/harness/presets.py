"""Desk-scale experiment presets mirroring the published parameter grids.

Each preset fixes an environment family, a sweep axis and the per-cell
hyperparameters; `build` materializes the (config, clients) pair for one
(sweep value, algorithm, seed) cell.  Heterogeneity ranges are realized as
evenly spaced client parameters so that only sampling depends on the seed.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Callable

import numpy as np

from ..core import (
    AdaptiveSampleSize,
    ConfigurationError,
    ExperimentConfig,
    FixedSampleSize,
    ParameterBox,
    RobustFilterConfig,
    make_stream,
    uniform_alpha,
)
from ..environments import (
    AppendixLinearContribution,
    ContaminatedClient,
    ContributionPricing,
    ContributionRegression,
    GaussianContaminant,
    GaussianDemandPricing,
    HousePricingRegression,
    StaticPoolClassification,
    StrategicClassification,
)
from .ingest import ingest_csv, shard_rows


def _spread(lo: float, hi: float, n: int) -> np.ndarray:
    """Evenly spaced client parameters over a published range."""
    if n == 1:
        return np.array([(lo + hi) / 2.0])
    return np.linspace(lo, hi, n)


def _coerce(current, value, key: str):
    """Type-check an override against the preset default it replaces."""
    if isinstance(current, bool):
        if isinstance(value, bool):
            return value
        if str(value).lower() in ("1", "true", "yes"):
            return True
        if str(value).lower() in ("0", "false", "no"):
            return False
        raise ConfigurationError(f"override {key}={value!r} is not a boolean")
    if isinstance(current, int):
        return int(value)
    if isinstance(current, float):
        return float(value)
    if isinstance(current, str) or current is None:
        return value
    if isinstance(value, type(current)):
        return value
    raise ConfigurationError(f"override {key}={value!r} does not match type {type(current).__name__}")


@dataclass(frozen=True)
class ExperimentPreset:
    """A named sweep: base parameters, a sweep axis, algorithms and seeds."""

    name: str
    description: str
    sweep_param: str
    sweep_values: tuple
    algorithms: tuple[str, ...]
    params: dict[str, Any]
    build: Callable[[dict[str, Any], Any, str, int], tuple[ExperimentConfig, list[ContaminatedClient]]]
    seeds: tuple[int, ...] = tuple(range(10))
    classification: bool = False

    def cell(self, sweep_value, algorithm: str, seed: int,
             overrides: dict[str, Any] | None = None):
        params = dict(self.params)
        if overrides:
            unknown = set(overrides) - set(params)
            if unknown:
                raise ConfigurationError(
                    f"unknown override keys {sorted(unknown)}; valid: {sorted(params)}"
                )
            for key, value in overrides.items():
                params[key] = _coerce(params[key], value, key)
        return self.build(params, sweep_value, algorithm, seed)


def _base_config(params, algorithm, seed, dim_box, robust=None, clusters=None,
                 sample_size=None, ridge=0.0) -> ExperimentConfig:
    n_clients = int(params["num_clients"])
    if algorithm == "CentralizedPG":
        robust = None
        clusters = None
    return ExperimentConfig(
        eta=float(params["eta"]),
        H=int(params["H"]),
        R=int(params["R"]) if algorithm != "CentralizedPG" else 1,
        T=int(params["T"]),
        num_clients=n_clients,
        enrollment_fraction=float(params.get("enrollment_fraction", 1.0)),
        alpha=uniform_alpha(n_clients),
        seed=seed,
        algorithm=algorithm,
        sample_size=sample_size or FixedSampleSize(int(params["n"])),
        robust_filter=robust,
        server_clusters=clusters,
        projection=dim_box,
        ridge=ridge,
        eval_samples=int(params.get("eval_samples", 2000)),
    )


# ---------------------------------------------------------------------------
# pricing with dynamic demands
# ---------------------------------------------------------------------------

def _demand_clients(params, epsilon: float) -> list[ContaminatedClient]:
    n_clients = int(params["num_clients"])
    mu0 = _spread(params["mu0_lo"], params["mu0_hi"], n_clients)
    gamma = _spread(params["gamma_lo"], params["gamma_hi"], n_clients)
    contaminant = GaussianContaminant(
        mu=np.array([params["contaminant_mu"]]), sigma=params["contaminant_sigma"]
    )
    return [
        ContaminatedClient(
            env=GaussianDemandPricing(mu0=np.array([mu0[i]]), gamma=float(gamma[i]),
                                      sigma=params["sigma"]),
            epsilon=epsilon,
            contaminant=contaminant if epsilon > 0 else None,
        )
        for i in range(n_clients)
    ]


def _build_fig1a(params, epsilon, algorithm, seed):
    box = ParameterBox(np.array([0.0]), np.array([5.0]))
    robust = None
    if algorithm == "ProFL":
        robust = RobustFilterConfig(C=params["C"], J=params["J"], B=int(params["B"]))
    cfg = _base_config(params, algorithm, seed, box, robust=robust)
    return cfg, _demand_clients(params, float(epsilon))


def _build_scalar_pricing(params, _sweep, algorithm, seed):
    box = ParameterBox(np.array([0.0]), np.array([5.0]))
    n_clients = int(params["num_clients"])
    clusters = {i: 0 for i in range(n_clients)} if algorithm == "ProFL" else None
    cfg = _base_config(params, algorithm, seed, box, clusters=clusters)
    clients = [
        ContaminatedClient(env=GaussianDemandPricing(
            mu0=np.array([params["mu0"]]), gamma=params["gamma"], sigma=params["sigma"]))
        for _ in range(n_clients)
    ]
    return cfg, clients


# ---------------------------------------------------------------------------
# pricing with dynamic contribution
# ---------------------------------------------------------------------------

def _contribution_clients(params) -> list[ContaminatedClient]:
    n_clients = int(params["num_clients"])
    jitter = _spread(1.0 - params["heterogeneity"], 1.0 + params["heterogeneity"], n_clients)
    return [
        ContaminatedClient(
            env=ContributionPricing(
                group_means=np.array([[params["mu_group1"] * jitter[i]],
                                      [params["mu_group2"] * jitter[i]]]),
                sigma=params["sigma"],
                budget=params["budget"],
            )
        )
        for i in range(n_clients)
    ]


def _build_contribution(params, sweep_value, algorithm, seed):
    params = dict(params)
    if params.get("sweep_is_n"):
        params["n"] = int(sweep_value)
    elif params.get("sweep_is_eta"):
        params["eta"] = float(sweep_value)
    elif params.get("sweep_is_H"):
        params["H"] = int(sweep_value)
    box = ParameterBox(np.array([0.0]), np.array([3.1]))
    clusters = None
    if params.get("sweep_is_cluster") and sweep_value == "server":
        clusters = {i: 0 for i in range(int(params["num_clients"]))}
    cfg = _base_config(params, algorithm, seed, box, clusters=clusters)
    return cfg, _contribution_clients(params)


def _linear_contribution_clients(params) -> list[ContaminatedClient]:
    n_clients = int(params["num_clients"])
    return [
        ContaminatedClient(
            env=AppendixLinearContribution(a1=params["a1"], a2=params["a2"],
                                           sigma=params["sigma"]),
        )
        for _ in range(n_clients)
    ]


def _build_linear_contribution(params, _sweep, algorithm, seed):
    box = ParameterBox(np.array([-1.0]), np.array([1.0]))
    n_clients = int(params["num_clients"])
    clusters = {i: 0 for i in range(n_clients)} if algorithm == "ProFL" else None
    cfg = _base_config(params, algorithm, seed, box, clusters=clusters)
    return cfg, _linear_contribution_clients(params)


def _build_adaptive(params, mode, algorithm, seed):
    box = ParameterBox(np.array([-1.0]), np.array([1.0]))
    if mode == "fixed":
        sample_size = FixedSampleSize(int(params["n_max"]))
    else:
        sample_size = AdaptiveSampleSize(Phi=float(mode), n_min=int(params["n_min"]),
                                         n_max=int(params["n_max"]),
                                         phi=params["phi"])
    n_clients = int(params["num_clients"])
    clusters = {i: 0 for i in range(n_clients)} if algorithm == "ProFL" else None
    cfg = _base_config(params, algorithm, seed, box, sample_size=sample_size,
                       clusters=clusters)
    cfg = replace(cfg, theta0=np.array([params["theta0"]]))
    return cfg, _linear_contribution_clients(params)


# ---------------------------------------------------------------------------
# house pricing regression
# ---------------------------------------------------------------------------

def _regression_clients(params, het: float) -> list[ContaminatedClient]:
    n_clients = int(params["num_clients"])
    gamma = _spread(params["gamma_mid"] - het, params["gamma_mid"] + het, n_clients)
    return [
        ContaminatedClient(
            env=HousePricingRegression(
                mu_x=np.array([params["mu_x"]]), a=np.array([params["a"]]),
                gamma=float(gamma[i]), sigma_x=params["sigma_x"],
                noise_sigma=params["noise_sigma"], ridge=params["ridge"],
            )
        )
        for i in range(n_clients)
    ]


def _build_table_pricing(params, het, algorithm, seed):
    box = ParameterBox(np.array([-3.0]), np.array([3.0]))
    cfg = _base_config(params, algorithm, seed, box, ridge=params["ridge"])
    return cfg, _regression_clients(params, float(het))


def _build_fig5b(params, _sweep, algorithm, seed):
    box = ParameterBox(np.array([0.0]), np.array([4.0]))
    cfg = _base_config(params, algorithm, seed, box, ridge=params["ridge"])
    n_clients = int(params["num_clients"])
    clients = [
        ContaminatedClient(
            env=ContributionRegression(
                slopes=np.array([[params["slope1"]], [params["slope2"]]]),
                mu_x=np.array([params["mu_x"]]), sigma_x=params["sigma_x"],
                noise_sigma=params["noise_sigma"], c=params["c"],
                ridge=params["ridge"],
            )
        )
        for _ in range(n_clients)
    ]
    return cfg, clients


# ---------------------------------------------------------------------------
# binary strategic classification
# ---------------------------------------------------------------------------

def _classification_clients(params) -> list[ContaminatedClient]:
    n_clients = int(params["num_clients"])
    g1 = _spread(params["gamma1_lo"], params["gamma1_hi"], n_clients)
    g0 = _spread(params["gamma0_lo"], params["gamma0_hi"], n_clients)
    mu1_values = params["mu1_values"]
    clients = []
    for i in range(n_clients):
        mu1 = mu1_values[i % len(mu1_values)]
        clients.append(ContaminatedClient(
            env=StrategicClassification(
                mu0=np.array([params["mu0"]]), mu1=np.array([mu1]),
                gamma0=float(g0[i]), gamma1=float(g1[i]),
                var0=params["var"], var1=params["var"], ridge=params["ridge"],
            )
        ))
    return clients


def _build_accuracy(params, _sweep, algorithm, seed):
    box = ParameterBox(np.array([-5.0]), np.array([5.0]))
    cfg = _base_config(params, algorithm, seed, box, ridge=params["ridge"])
    return cfg, _classification_clients(params)


def _build_fedavg_equivalence(params, _sweep, algorithm, seed):
    """Static pools (gamma = 0) drawn once per (seed, client); full-batch draws
    make the two algorithms coincide exactly."""
    n_clients = int(params["num_clients"])
    pool_size = int(params["pool_size"])
    clients = []
    for i in range(n_clients):
        rng = make_stream(seed, "pool", i)
        y = (rng.random(pool_size) < 0.5).astype(np.float64)
        x = np.where(y[:, None] == 1.0, params["mu1"], params["mu0"]) \
            + np.sqrt(params["var"]) * rng.standard_normal((pool_size, 1))
        env = StaticPoolClassification(features=x, labels=y, gamma0=0.0, gamma1=0.0,
                                       ridge=params["ridge"])
        clients.append(ContaminatedClient(env=env, n=pool_size))
    box = ParameterBox(np.array([-5.0]), np.array([5.0]))
    params = dict(params, n=pool_size)
    cfg = _base_config(params, algorithm, seed, box, ridge=params["ridge"])
    return cfg, clients


def _build_csv(params, _sweep, algorithm, seed):
    if not params.get("csv_path"):
        raise ConfigurationError(
            "csv-strategic needs --override csv_path=<file> (header row, numeric "
            "columns, final binary label column)"
        )
    features, labels = ingest_csv(params["csv_path"])
    n_clients = int(params["num_clients"])
    shards = shard_rows(len(labels), n_clients)
    clients = []
    for i, rows in enumerate(shards):
        env = StaticPoolClassification(
            features=features[rows], labels=labels[rows],
            gamma0=params["gamma0"], gamma1=params["gamma1"], ridge=params["ridge"],
        )
        clients.append(ContaminatedClient(env=env, n=min(int(params["n"]), len(rows))))
    dim = features.shape[1]
    box = ParameterBox(np.full(dim, -5.0), np.full(dim, 5.0))
    cfg = _base_config(params, algorithm, seed, box, ridge=params["ridge"])
    return cfg, clients


# ---------------------------------------------------------------------------
# registry
# ---------------------------------------------------------------------------

PRESETS: dict[str, ExperimentPreset] = {}


def _register(preset: ExperimentPreset) -> None:
    PRESETS[preset.name] = preset


_register(ExperimentPreset(
    name="fig1a-contamination",
    description="Demand pricing under Huber contamination; sweep over epsilon.",
    sweep_param="epsilon",
    sweep_values=(0.0, 0.1, 0.2, 0.4),
    algorithms=("ProFL", "PoFL"),
    params=dict(eta=0.001, R=5, H=25, n=500, T=1000, num_clients=10,
                mu0_lo=6.0, mu0_hi=7.0, gamma_lo=1.0, gamma_hi=3.0, sigma=1.0,
                contaminant_mu=20.0, contaminant_sigma=1.0,
                C=0.05, J=0.05, B=20),
    build=_build_fig1a,
))

_register(ExperimentPreset(
    name="scalar-pricing-optimum",
    description="Homogeneous scalar demand pricing; optimal vs stable point. "
                "The long window plus server-side Jacobian averaging tames the "
                "finite-difference noise at stationarity.",
    sweep_param="case",
    sweep_values=("default",),
    algorithms=("ProFL", "PFL"),
    params=dict(eta=0.01, R=5, H=200, n=3000, T=650, num_clients=6,
                mu0=6.0, gamma=2.0, sigma=0.4),
    build=_build_scalar_pricing,
))

_register(ExperimentPreset(
    name="fig1b-server-jacobian",
    description="Many small clients; server-side vs local Jacobian estimation.",
    sweep_param="jacobian",
    sweep_values=("local", "server"),
    algorithms=("ProFL",),
    params=dict(eta=0.0001, R=3, H=10, n=60, T=1500, num_clients=100,
                mu_group1=3.0, mu_group2=1.0, sigma=0.5, budget=10.0,
                heterogeneity=0.05, sweep_is_cluster=True),
    build=_build_contribution,
    seeds=tuple(range(3)),
))

_register(ExperimentPreset(
    name="fig1c-adaptive-sampling",
    description="Adaptive sample size vs a fixed budget on linear contribution "
                "dynamics; sweep over the error tolerance.",
    sweep_param="sampling",
    sweep_values=("fixed", 0.05, 0.1),
    algorithms=("ProFL",),
    params=dict(eta=0.03, R=5, H=20, T=600, num_clients=10,
                a1=0.5, a2=-0.5, sigma=0.5, n_min=50, n_max=1000, phi=0.05,
                theta0=0.9, n=1000),
    build=_build_adaptive,
))

_register(ExperimentPreset(
    name="fig2a-sample-sizes",
    description="Contribution pricing; variance across seeds vs sample size.",
    sweep_param="n",
    sweep_values=(50, 500, 5000),
    algorithms=("ProFL",),
    params=dict(eta=0.001, R=5, H=20, n=500, T=800, num_clients=10,
                mu_group1=3.0, mu_group2=1.0, sigma=0.5, budget=10.0,
                heterogeneity=0.1, sweep_is_n=True),
    build=_build_contribution,
))

_register(ExperimentPreset(
    name="fig2b-learning-rates",
    description="Contribution pricing; distance to the optimum vs learning rate.",
    sweep_param="eta",
    sweep_values=(0.03, 0.01, 0.001),
    algorithms=("ProFL",),
    params=dict(eta=0.001, R=5, H=20, n=2500, T=3000, num_clients=10,
                mu_group1=30.0, mu_group2=10.0, sigma=2.0, budget=100.0,
                heterogeneity=0.05, sweep_is_eta=True),
    build=_build_contribution,
))

_register(ExperimentPreset(
    name="fig2c-window-sizes",
    description="Contribution pricing; effect of the estimation window H.",
    sweep_param="H",
    sweep_values=(4, 20, 100),
    algorithms=("ProFL",),
    params=dict(eta=0.001, R=5, H=20, n=500, T=3000, num_clients=10,
                mu_group1=3.0, mu_group2=1.0, sigma=0.5, budget=10.0,
                heterogeneity=0.1, sweep_is_H=True),
    build=_build_contribution,
))

_register(ExperimentPreset(
    name="fig5a-contribution",
    description="Linear contribution dynamics where the optimal and stable "
                "points coincide at zero.",
    sweep_param="case",
    sweep_values=("default",),
    algorithms=("ProFL", "PFL"),
    params=dict(eta=0.03, R=5, H=20, n=500, T=400, num_clients=10,
                a1=0.5, a2=-0.5, sigma=0.5),
    build=_build_linear_contribution,
))

_register(ExperimentPreset(
    name="fig5b-contribution-regression",
    description="Two-group regression with loss-dependent contribution.",
    sweep_param="case",
    sweep_values=("default",),
    algorithms=("ProFL", "PFL"),
    params=dict(eta=0.001, R=5, H=1, n=500, T=1500, num_clients=10,
                slope1=1.0, slope2=3.0, mu_x=1.0, sigma_x=1.0, noise_sigma=2.0,
                c=1.0, ridge=10.0 / 3.0),
    build=_build_fig5b,
))

_register(ExperimentPreset(
    name="table-pricing-loss",
    description="House pricing regression; federated vs centralized pooled "
                "gradients under client heterogeneity (sweep over the spread).",
    sweep_param="alpha",
    sweep_values=(0.0, 0.25, 0.5),
    algorithms=("ProFL", "CentralizedPG"),
    params=dict(eta=0.01, R=5, H=25, n=500, T=700, num_clients=10,
                gamma_mid=1.5, mu_x=1.0, a=4.0, sigma_x=1.0, noise_sigma=1.0,
                ridge=10.0 / 3.0),
    build=_build_table_pricing,
))

_register(ExperimentPreset(
    name="table-accuracy-same",
    description="Strategic classification, all clients sharing one base "
                "distribution.",
    sweep_param="case",
    sweep_values=("default",),
    algorithms=("ProFL", "PFL", "PoFL"),
    params=dict(eta=0.03, R=10, H=500, n=500, T=1200, num_clients=10,
                mu0=1.0, mu1_values=(-1.0,), var=0.25,
                gamma1_lo=2.8, gamma1_hi=3.2, gamma0_lo=0.0, gamma0_hi=0.04,
                ridge=0.01, eval_samples=300),
    build=_build_accuracy,
    classification=True,
))

_register(ExperimentPreset(
    name="table-accuracy-different",
    description="Strategic classification with client-specific base "
                "distributions.",
    sweep_param="case",
    sweep_values=("default",),
    algorithms=("ProFL", "PFL", "PoFL"),
    params=dict(eta=0.03, R=500, H=1, n=500, T=1000, num_clients=10,
                mu0=1.0, mu1_values=(-1.2, -0.6), var=0.25,
                gamma1_lo=2.8, gamma1_hi=3.2, gamma0_lo=0.0, gamma0_hi=0.04,
                ridge=0.01, eval_samples=300),
    build=_build_accuracy,
    classification=True,
))

_register(ExperimentPreset(
    name="appendix-fedavg-equivalence",
    description="No model-dependent shift: both algorithms reduce to plain "
                "federated averaging on static pools.",
    sweep_param="case",
    sweep_values=("default",),
    algorithms=("ProFL", "PFL"),
    params=dict(eta=0.03, R=5, H=5, T=150, num_clients=10, pool_size=600,
                mu0=1.0, mu1=-1.0, var=0.25, ridge=0.01, n=600,
                eval_samples=300),
    build=_build_fedavg_equivalence,
    classification=True,
    seeds=tuple(range(3)),
))

_register(ExperimentPreset(
    name="csv-strategic",
    description="Strategic classification on a CSV dataset (header row, "
                "numeric features, final binary label column).",
    sweep_param="case",
    sweep_values=("default",),
    algorithms=("ProFL", "PFL"),
    params=dict(eta=0.03, R=5, H=1, n=2368, T=200, num_clients=10,
                gamma1=3.0, gamma0=0.0, ridge=0.01, csv_path="",
                eval_samples=300),
    build=_build_csv,
    classification=True,
    seeds=tuple(range(3)),
))


def get_preset(name: str) -> ExperimentPreset:
    if name not in PRESETS:
        raise ConfigurationError(
            f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}"
        )
    return PRESETS[name]
