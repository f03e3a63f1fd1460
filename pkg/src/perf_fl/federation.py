"""Training loops: the robust optimal algorithm, its naive variant, the
plain-gradient baseline, and a centralized pooled-gradient baseline.

All loops share one clock: at the start of an iteration t with t mod R = 0
the server enrolls a client subset and pushes the global model; every
enrolled client then performs one local update per iteration; at the end of
each R-block the server aggregates the latest local models.  The trace
therefore shows the global model changing only at row indices that are
multiples of R.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .core import (
    AdaptiveSampleSize,
    ConfigurationError,
    ExperimentConfig,
    FixedSampleSize,
    RunError,
    RunTrace,
    make_stream,
    project,
    select_enrolled,
    weighted_aggregate,
)
from .environments.base import (
    ClientStreams,
    ContaminatedClient,
    SampleBatch,
    analytic_loss_available,
    draw_batch,
    performative_loss,
)
from .estimation import (
    AdaptiveSizerState,
    GradientEstimate,
    HistoryWindow,
    JacobianEstimate,
    adaptive_sample_size,
    fd_jacobian,
    grad_l1,
    grad_l2,
    robust_gradient,
    server_jacobian,
)


@dataclass
class ClientState:
    """Per-client run state; owned by a single worker, never shared."""

    cid: int
    client: ContaminatedClient
    streams: ClientStreams
    theta: np.ndarray
    n: int
    window: HistoryWindow | None = None
    sizer: AdaptiveSizerState | None = None


@dataclass
class ServerState:
    theta: np.ndarray
    enrolled: np.ndarray


def _validate(cfg: ExperimentConfig, clients: list[ContaminatedClient]) -> None:
    if len(clients) != cfg.num_clients:
        raise ConfigurationError(
            f"config expects {cfg.num_clients} clients, got {len(clients)}"
        )
    for i, c in enumerate(clients):
        if c.env.dim != cfg.dim:
            raise ConfigurationError(
                f"client {i} environment dimension {c.env.dim} != box dimension {cfg.dim}"
            )
        c.alpha = float(cfg.alpha[i])  # cfg.alpha is the single source of truth
    if cfg.algorithm in ("PoFL", "PFL") and cfg.robust_filter is not None:
        raise ConfigurationError(f"{cfg.algorithm} does not use the robust filter")


def _make_loss_evaluator(cfg, clients):
    analytic = analytic_loss_available(clients)

    def evaluate(theta: np.ndarray, row: int) -> float:
        if analytic:
            return performative_loss(clients, theta, 1, use_closed_form=True)
        rng = make_stream(cfg.seed, "eval", row)
        return performative_loss(clients, theta, cfg.eval_samples, rng)

    return evaluate


def _initial_n(cfg: ExperimentConfig) -> int:
    if isinstance(cfg.sample_size, FixedSampleSize):
        return cfg.sample_size.n
    return cfg.sample_size.n_max  # adaptive sizing starts at the budget ceiling


def _make_sizer(cfg: ExperimentConfig) -> AdaptiveSizerState | None:
    ss = cfg.sample_size
    if not isinstance(ss, AdaptiveSampleSize):
        return None
    return AdaptiveSizerState(phi=ss.phi, Phi=ss.Phi, n_min=ss.n_min, n_max=ss.n_max)


def _local_gradient(state: ClientState, batch: SampleBatch, cfg: ExperimentConfig,
                    use_filter: bool) -> tuple[SampleBatch, GradientEstimate]:
    env = state.client.env
    if use_filter:
        rf = cfg.robust_filter
        kept, g1, loss_mean, removed = robust_gradient(
            batch, state.theta, env, rf.C, rf.J, rf.B
        )
    else:
        g1, loss_mean = grad_l1(batch, state.theta, env)
        kept, removed = batch, 0
    est = GradientEstimate(g1=g1, g2=None, loss_mean=loss_mean,
                           n_used=len(kept), n_removed=removed)
    return kept, est


def _cluster_jacobians(cfg: ExperimentConfig, states: dict[int, ClientState],
                       enrolled: np.ndarray) -> dict[int, JacobianEstimate]:
    """One averaged Jacobian per cluster whose enrolled members all have full windows."""
    jacs: dict[int, JacobianEstimate] = {}
    if cfg.server_clusters is None:
        return jacs
    groups: dict[int, list[int]] = {}
    for cid in enrolled:
        cluster = cfg.server_clusters.get(int(cid))
        if cluster is not None:
            groups.setdefault(cluster, []).append(int(cid))
    for cluster, members in groups.items():
        windows = [states[c].window for c in members]
        if all(w is not None and w.full for w in windows):
            jacs[cluster] = server_jacobian(windows)
    return jacs


def _run_federated(cfg: ExperimentConfig, clients: list[ContaminatedClient],
                   use_g2: bool, use_filter: bool, track_f: bool) -> RunTrace:
    _validate(cfg, clients)
    evaluate = _make_loss_evaluator(cfg, clients)
    t_start = time.perf_counter()

    states = {
        i: ClientState(
            cid=i,
            client=clients[i],
            streams=ClientStreams.for_client(cfg.seed, i),
            theta=project(cfg.initial_theta(), cfg.projection),
            n=_initial_n(cfg),
            window=HistoryWindow(cfg.H) if track_f else None,
            sizer=_make_sizer(cfg) if use_g2 else None,
        )
        for i in range(cfg.num_clients)
    }
    server = ServerState(theta=project(cfg.initial_theta(), cfg.projection),
                         enrolled=np.arange(cfg.num_clients))

    trace = RunTrace(dim=cfg.dim)
    trace.append(0, server.theta, evaluate(server.theta, 0), 0, 0, 0,
                 time.perf_counter() - t_start,
                 n_by_client=np.zeros(cfg.num_clients, dtype=np.int64))

    for t in range(cfg.T):
        if t % cfg.R == 0:
            server.enrolled = select_enrolled(t, cfg.num_clients,
                                              cfg.enrollment_fraction, cfg.seed)
            for cid in server.enrolled:
                states[cid].theta = server.theta.copy()

        cluster_jacs = {}
        if use_g2 and cfg.server_clusters is not None and t > cfg.H:
            cluster_jacs = _cluster_jacobians(cfg, states, server.enrolled)

        removed_total = 0
        n_total = 0
        n_by_client = np.zeros(cfg.num_clients, dtype=np.int64)
        for cid in server.enrolled:
            st = states[cid]
            try:
                batch = draw_batch(st.client, st.theta, st.n, st.streams.draw,
                                   st.streams.mix, st.streams.contaminant)
                kept, est = _local_gradient(st, batch, cfg, use_filter)
                n_total += len(batch)
                n_by_client[cid] = len(batch)
                removed_total += est.n_removed

                jac = None
                if track_f:
                    f_hat = st.client.env.f_hat(kept)
                    st.window.push(st.theta, f_hat)
                    if use_g2 and t > cfg.H and st.window.full:
                        cluster = (cfg.server_clusters or {}).get(cid)
                        jac = cluster_jacs.get(cluster) if cluster is not None else None
                        if jac is None:
                            jac = fd_jacobian(st.window)
                        if jac.usable:
                            est.g2 = grad_l2(kept, st.theta, st.client.env, jac, f_hat)

                st.theta = project(st.theta - cfg.eta * est.direction, cfg.projection)

                if st.sizer is not None and jac is not None and jac.usable:
                    st.sizer.observe(kept, est.loss_mean, jac, st.theta, st.client.env)
                    st.n = adaptive_sample_size(st.sizer, cfg.H, cfg.eta, jac.dtheta_norm)
            except FloatingPointError as exc:  # pragma: no cover - defensive
                raise RunError(f"numeric failure at iteration {t}, client {cid}: {exc}")

        if (t + 1) % cfg.R == 0:
            models = [states[cid].theta for cid in server.enrolled]
            weights = cfg.alpha[server.enrolled]
            server.theta = weighted_aggregate(models, weights)

        trace.append(t + 1, server.theta, evaluate(server.theta, t + 1),
                     len(server.enrolled), removed_total, n_total,
                     time.perf_counter() - t_start, n_by_client=n_by_client)
    return trace


def _run_centralized(cfg: ExperimentConfig, clients: list[ContaminatedClient]) -> RunTrace:
    """Pooled-gradient baseline: one model, one history window over pooled data."""
    _validate(cfg, clients)
    evaluate = _make_loss_evaluator(cfg, clients)
    t_start = time.perf_counter()

    streams = [ClientStreams.for_client(cfg.seed, i) for i in range(cfg.num_clients)]
    theta = project(cfg.initial_theta(), cfg.projection)
    window = HistoryWindow(cfg.H)
    env = clients[0].env  # pooled estimators use the shared environment family
    n_each = _initial_n(cfg)

    trace = RunTrace(dim=cfg.dim)
    trace.append(0, theta, evaluate(theta, 0), 0, 0, 0,
                 time.perf_counter() - t_start,
                 n_by_client=np.zeros(cfg.num_clients, dtype=np.int64))

    for t in range(cfg.T):
        zs, groups = [], []
        for i, client in enumerate(clients):
            batch = draw_batch(client, theta, n_each, streams[i].draw,
                               streams[i].mix, streams[i].contaminant)
            zs.append(batch.z)
            if batch.group is not None:
                groups.append(batch.group)
        pooled = SampleBatch(
            z=np.concatenate(zs, axis=0),
            group=np.concatenate(groups) if groups else None,
        )
        g1, loss_mean = grad_l1(pooled, theta, env)
        est = GradientEstimate(g1=g1, g2=None, loss_mean=loss_mean,
                               n_used=len(pooled), n_removed=0)
        f_hat = env.f_hat(pooled)
        window.push(theta, f_hat)
        if t > cfg.H and window.full:
            jac = fd_jacobian(window)
            if jac.usable:
                est.g2 = grad_l2(pooled, theta, env, jac, f_hat)
        theta = project(theta - cfg.eta * est.direction, cfg.projection)
        trace.append(t + 1, theta, evaluate(theta, t + 1), cfg.num_clients, 0,
                     len(pooled), time.perf_counter() - t_start,
                     n_by_client=np.full(cfg.num_clients, n_each, dtype=np.int64))
    return trace


def run_profl(cfg: ExperimentConfig, clients: list[ContaminatedClient]) -> RunTrace:
    """Robust optimal training: filtered gradients, finite-difference Jacobian
    after the warm-up window, optional server clustering and adaptive sizing."""
    if cfg.algorithm != "ProFL":
        raise ConfigurationError("config is not a ProFL config")
    return _run_federated(cfg, clients, use_g2=True,
                          use_filter=cfg.robust_filter is not None, track_f=True)


def run_pofl(cfg: ExperimentConfig, clients: list[ContaminatedClient]) -> RunTrace:
    """Naive variant: same loop without outlier filtering, adaptive sizing or
    server-side Jacobians (raw samples feed every estimator)."""
    if cfg.algorithm != "PoFL":
        raise ConfigurationError("config is not a PoFL config")
    return _run_federated(cfg, clients, use_g2=True, use_filter=False, track_f=True)


def run_pfl(cfg: ExperimentConfig, clients: list[ContaminatedClient]) -> RunTrace:
    """Plain-gradient baseline: no Jacobian, no shift correction; converges to
    the performative stable point rather than the optimum."""
    if cfg.algorithm != "PFL":
        raise ConfigurationError("config is not a PFL config")
    return _run_federated(cfg, clients, use_g2=False, use_filter=False, track_f=False)


def run_centralized_pg(cfg: ExperimentConfig, clients: list[ContaminatedClient]) -> RunTrace:
    if cfg.algorithm != "CentralizedPG":
        raise ConfigurationError("config is not a CentralizedPG config")
    return _run_centralized(cfg, clients)


_RUNNERS = {
    "ProFL": run_profl,
    "PoFL": run_pofl,
    "PFL": run_pfl,
    "CentralizedPG": run_centralized_pg,
}


def run_experiment(cfg: ExperimentConfig, clients: list[ContaminatedClient]) -> RunTrace:
    """Dispatch on cfg.algorithm."""
    return _RUNNERS[cfg.algorithm](cfg, clients)
