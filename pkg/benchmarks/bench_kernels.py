#!/usr/bin/env python3
"""Benchmark the numba filter kernel against its pure-numpy twin.

Times the iterative SVD outlier filter on representative batch shapes and a
short contaminated training run under both backends.

    python3 benchmarks/bench_kernels.py
"""
import os
import time

import numpy as np

from perf_fl._kernels import nb_backend, np_backend


def make_batch(rng, n, d, eps):
    n_out = int(eps * n)
    clean = rng.normal(0.0, 1.0, size=(n - n_out, d))
    outliers = rng.normal(12.0, 1.0, size=(n_out, d))
    return np.ascontiguousarray(np.concatenate([clean, outliers]))


def time_filter(fn, batches, repeats=5):
    fn(batches[0], 0.05, 0.05, 20)  # warm up / compile
    t0 = time.perf_counter()
    for _ in range(repeats):
        for g in batches:
            fn(g, 0.05, 0.05, 20)
    return (time.perf_counter() - t0) / (repeats * len(batches))


def bench_filter():
    rng = np.random.default_rng(0)
    print(f"{'shape':>12} {'eps':>5} {'numpy':>10} {'numba':>10} {'speedup':>8}")
    for n, d in ((500, 1), (500, 2), (500, 5), (2000, 2), (5000, 5)):
        for eps in (0.0, 0.2):
            batches = [make_batch(rng, n, d, eps) for _ in range(8)]
            t_np = time_filter(np_backend.robust_filter_indices, batches)
            t_nb = time_filter(nb_backend.robust_filter_indices, batches)
            print(f"{n}x{d:>7} {eps:>5.1f} {t_np * 1e6:>8.0f}us {t_nb * 1e6:>8.0f}us "
                  f"{t_np / t_nb:>7.1f}x")


def bench_training_run():
    from perf_fl.core import (ExperimentConfig, FixedSampleSize, ParameterBox,
                              RobustFilterConfig, uniform_alpha)
    from perf_fl.environments import (ContaminatedClient, GaussianContaminant,
                                      GaussianDemandPricing)
    from perf_fl.federation import run_experiment

    def clients():
        q = GaussianContaminant(np.array([20.0]), 1.0)
        return [ContaminatedClient(
            env=GaussianDemandPricing(mu0=np.array([6.0]), gamma=2.0, sigma=1.0),
            epsilon=0.2, contaminant=q) for _ in range(10)]

    cfg = ExperimentConfig(
        eta=0.001, H=25, R=5, T=200, num_clients=10, enrollment_fraction=1.0,
        alpha=uniform_alpha(10), seed=0, algorithm="ProFL",
        sample_size=FixedSampleSize(500),
        robust_filter=RobustFilterConfig(C=0.05, J=0.05, B=20),
        projection=ParameterBox(np.array([0.0]), np.array([5.0])),
    )
    run_experiment(cfg, clients())  # warm up
    t0 = time.perf_counter()
    run_experiment(cfg, clients())
    print(f"contaminated ProFL run (T=200, N=10, n=500): "
          f"{time.perf_counter() - t0:.2f}s with backend "
          f"{os.environ.get('PERF_FL_BACKEND', 'numba')}")


if __name__ == "__main__":
    print("== filter kernel: numpy vs numba ==")
    bench_filter()
    print("\n== end-to-end ==")
    bench_training_run()
    print("\nSet PERF_FL_BACKEND=numpy to force the fallback path in the package.")
