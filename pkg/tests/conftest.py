import numpy as np
import pytest

from perf_fl.environments import GaussianDemandPricing, SampleBatch
from perf_fl.estimation import robust_gradient


@pytest.fixture(scope="session", autouse=True)
def warm_numba_kernel():
    """Compile (or load the cached) filter kernel before any timed test runs."""
    env = GaussianDemandPricing(mu0=np.array([0.0, 0.0]), gamma=1.0, sigma=1.0)
    batch = SampleBatch(z=np.random.default_rng(0).normal(size=(32, 2)))
    robust_gradient(batch, np.zeros(2), env, C=0.1, J=0.01, B=20)
