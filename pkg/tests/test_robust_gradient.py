import numpy as np
import pytest

from perf_fl._kernels import np_backend
from perf_fl.core import ConfigurationError, make_stream
from perf_fl.environments import GaussianDemandPricing, SampleBatch
from perf_fl.estimation import robust_gradient


def pricing_env(d):
    return GaussianDemandPricing(mu0=np.zeros(d), gamma=1.0, sigma=1.0)


def planted_batch(rng, n_clean=90, n_out=10, outlier=10.0):
    z = np.concatenate([
        rng.normal(0.0, 0.1, size=(n_clean, 2)),
        np.full((n_out, 2), outlier),
    ])
    flags = np.concatenate([np.zeros(n_clean, bool), np.ones(n_out, bool)])
    return SampleBatch(z=z, is_contaminant=flags)


class TestRobustGradient:
    def test_identical_gradients_short_circuit(self):
        batch = SampleBatch(z=np.tile([[1.0, 1.0]], (10, 1)))
        kept, g1, _, removed = robust_gradient(batch, np.zeros(2), pricing_env(2),
                                               C=0.1, J=0.01, B=20)
        np.testing.assert_allclose(g1, [-1.0, -1.0])
        assert removed == 0
        assert len(kept) == 10

    def test_planted_outliers_removed(self):
        rng = np.random.default_rng(0)
        batch = planted_batch(rng)
        kept, g1, _, removed = robust_gradient(batch, np.zeros(2), pricing_env(2),
                                               C=0.1, J=0.01, B=20)
        # oracle: the mean over samples flagged clean
        clean_mean = -batch.z[~batch.is_contaminant].mean(axis=0)
        assert kept.is_contaminant.sum() == 0  # recall 10/10
        assert np.linalg.norm(g1 - clean_mean) < 0.1

    def test_planted_recall_across_seeds(self):
        recalls = []
        for seed in range(20):
            rng = np.random.default_rng(seed)
            batch = planted_batch(rng)
            kept, *_ = robust_gradient(batch, np.zeros(2), pricing_env(2),
                                       C=0.1, J=0.01, B=20)
            removed_outliers = 10 - int(kept.is_contaminant.sum())
            recalls.append(removed_outliers / 10)
        assert np.mean(recalls) >= 0.9

    def test_clean_batch_stopping_rule(self):
        # clean Gaussian batch: few removals, and the filtered mean moves by
        # less than J relative to the unfiltered mean
        rng = np.random.default_rng(1)
        z = rng.normal(3.0, 1.0, size=(500, 1))
        batch = SampleBatch(z=z)
        env = pricing_env(1)
        kept, g1, _, removed = robust_gradient(batch, np.zeros(1), env,
                                               C=0.01, J=0.01, B=20)
        assert removed <= 0.05 * 500
        g1_unfiltered = -z.mean(axis=0)
        rel = np.linalg.norm(g1 - g1_unfiltered) / np.linalg.norm(g1_unfiltered)
        assert rel < 0.01

    def test_never_below_half(self):
        # adversarial bimodal batch: the filter must keep >= ceil(n/2)
        rng = np.random.default_rng(2)
        z = np.concatenate([rng.normal(0, 0.05, (30, 1)), rng.normal(40, 0.05, (31, 1))])
        batch = SampleBatch(z=z)
        for C in (0.2, 0.4, 0.6):
            kept, *_ , removed = robust_gradient(batch, np.zeros(1), pricing_env(1),
                                                 C=C, J=0.001, B=10)
            assert len(kept) >= (len(batch) + 1) // 2

    def test_small_batch_unfiltered(self):
        batch = SampleBatch(z=np.array([[5.0]]))
        kept, g1, _, removed = robust_gradient(batch, np.zeros(1), pricing_env(1),
                                               C=0.1, J=0.01, B=20)
        assert removed == 0 and len(kept) == 1
        assert g1[0] == -5.0

    def test_parameter_validation(self):
        batch = SampleBatch(z=np.zeros((4, 1)))
        with pytest.raises(ConfigurationError):
            robust_gradient(batch, np.zeros(1), pricing_env(1), C=1.2, J=0.1, B=20)
        with pytest.raises(ConfigurationError):
            robust_gradient(batch, np.zeros(1), pricing_env(1), C=0.1, J=0.1, B=1)

    def test_score_sign_invariance(self):
        # tau squares the projection, so flipping the singular vector's sign
        # changes nothing
        rng = np.random.default_rng(3)
        g = rng.normal(size=(50, 3))
        centered = g - g.mean(axis=0)
        _, _, vt = np.linalg.svd(centered, full_matrices=False)
        v = vt[0]
        tau_pos = (centered @ v) ** 2
        tau_neg = (centered @ -v) ** 2
        np.testing.assert_array_equal(tau_pos, tau_neg)


class TestBackendAgreement:
    @pytest.mark.parametrize("case", ["clean", "planted", "bimodal"])
    def test_numpy_numba_same_kept_set(self, case):
        rng = np.random.default_rng(7)
        if case == "clean":
            g = rng.normal(size=(300, 2))
        elif case == "planted":
            g = np.concatenate([rng.normal(0, 0.1, (90, 2)), np.full((10, 2), -10.0)])
        else:
            g = np.concatenate([rng.normal(0, 0.1, (40, 2)), rng.normal(8, 0.1, (20, 2))])
        args = (np.ascontiguousarray(g), 0.1, 0.01, 20)
        ref = np_backend.robust_filter_indices(*args)
        try:
            from perf_fl._kernels import nb_backend
        except ImportError:
            pytest.skip("numba backend unavailable")
        out = nb_backend.robust_filter_indices(*args)
        np.testing.assert_array_equal(np.sort(ref), np.sort(out))

    def test_env_flag_selects_backend(self):
        import subprocess
        import sys

        code = (
            "from perf_fl._kernels import backend_name; print(backend_name())"
        )
        out = subprocess.run(
            [sys.executable, "-c", code],
            env={"PERF_FL_BACKEND": "numpy", "PATH": "/usr/bin:/bin:/usr/local/bin"},
            capture_output=True, text=True, cwd="/root/pkg",
        )
        assert out.stdout.strip() == "numpy"
