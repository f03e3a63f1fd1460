import math

import numpy as np
import pytest

from perf_fl.core import ConfigurationError, make_stream
from perf_fl.environments import (
    ContaminatedClient,
    GaussianDemandPricing,
    SampleBatch,
)
from perf_fl.estimation import (
    AdaptiveSizerState,
    HistoryWindow,
    JacobianSource,
    adaptive_sample_size,
    fd_jacobian,
    grad_l1,
    grad_l2,
    server_jacobian,
)


def pricing_env(d=1, mu0=6.0, gamma=2.0, sigma=1.0):
    return GaussianDemandPricing(mu0=np.full(d, mu0), gamma=gamma, sigma=sigma)


class TestGradL1:
    def test_pricing_mean_gradient(self):
        # grad of -theta.z is -z; the estimate is the sample mean
        env = pricing_env(d=2)
        batch = SampleBatch(z=np.array([[1.0, 2.0], [3.0, 4.0]]))
        g1, _ = grad_l1(batch, np.zeros(2), env)
        np.testing.assert_allclose(g1, [-2.0, -3.0])

    def test_single_sample_identity(self):
        env = pricing_env(d=2)
        z = np.array([[0.7, -0.3]])
        g1, loss = grad_l1(SampleBatch(z=z), np.array([1.0, 1.0]), env)
        np.testing.assert_allclose(g1, -z[0])
        assert loss == pytest.approx(-(0.7 - 0.3))

    def test_large_sample_expectation(self):
        # E[grad] = -(mu0 - gamma theta) = -4 at theta=1
        env = pricing_env()
        batch = env.sample(np.array([1.0]), 100_000, make_stream(0, "g1"))
        g1, _ = grad_l1(batch, np.array([1.0]), env)
        assert abs(g1[0] + 4.0) < 0.02


class TestFdJacobian:
    def test_scalar_linear_exact(self):
        # f(theta) = 2 theta over history {0.9, 1.0} with current 1.1
        win = HistoryWindow(H=2)
        for t in (0.9, 1.0, 1.1):
            win.push(np.array([t]), np.array([2.0 * t]))
        est = fd_jacobian(win)
        assert est.matrix[0, 0] == pytest.approx(2.0, abs=1e-12)
        assert est.usable

    def test_random_linear_map_exact(self):
        r = np.random.default_rng(2)
        a = r.normal(size=(2, 2))
        win = HistoryWindow(H=3)
        for _ in range(4):
            theta = r.normal(size=2)
            win.push(theta, a @ theta)
        est = fd_jacobian(win)
        np.testing.assert_allclose(est.matrix, a, atol=1e-8)

    def test_identical_history_degenerate(self):
        win = HistoryWindow(H=3)
        for _ in range(4):
            win.push(np.array([1.0]), np.array([2.0]))
        est = fd_jacobian(win)
        assert est.degenerate
        assert not est.usable
        assert np.all(est.matrix == 0.0)

    def test_rank_deficiency_flagged(self):
        # all steps along one direction in d=2: second singular value vanishes
        win = HistoryWindow(H=4)
        for k in range(5):
            theta = np.array([0.1 * k, 0.0])
            win.push(theta, theta.copy())
        est = fd_jacobian(win)
        assert est.rank_deficient
        assert not est.usable

    def test_exactness_property_any_window(self):
        # noiseless linear f recovered to 1e-8 whenever H >= d
        r = np.random.default_rng(9)
        for d in (1, 2, 3, 4):
            a = r.normal(size=(d, d))
            win = HistoryWindow(H=d + 2)
            for _ in range(d + 3):
                theta = r.normal(size=d)
                win.push(theta, a @ theta)
            est = fd_jacobian(win)
            assert np.max(np.abs(est.matrix - a)) < 1e-8
            assert est.min_singular_value > 0

    def test_not_full_raises(self):
        win = HistoryWindow(H=3)
        win.push(np.zeros(1), np.zeros(1))
        with pytest.raises(ConfigurationError):
            fd_jacobian(win)


class TestGradL2:
    def test_zero_jacobian_gives_zero(self):
        env = pricing_env()
        est = fd_jacobian_stub(np.zeros((1, 1)))
        batch = SampleBatch(z=np.array([[1.0], [2.0]]))
        out = grad_l2(batch, np.array([1.0]), env, est, np.array([1.5]))
        np.testing.assert_array_equal(out, [0.0])

    def test_scalar_direct_formula(self):
        # loss 5, jac -2, sigma 1, f_hat 3, z 4: 5 * (-2) * (4 - 3) = -10
        env = GaussianDemandPricing(mu0=np.array([0.0]), gamma=0.0, sigma=1.0)
        est = fd_jacobian_stub(np.array([[-2.0]]))
        batch = SampleBatch(z=np.array([[4.0]]))
        out = grad_l2(batch, np.array([-1.25]), env, est, np.array([3.0]))
        # loss(-1.25; z=4) = -(-1.25 * 4) = 5
        assert out[0] == pytest.approx(-10.0)

    def test_monte_carlo_matches_gamma_theta(self):
        # E[l(z) jac (z - f)] / sigma^2 = gamma theta for the demand family
        env = GaussianDemandPricing(mu0=np.array([3.0]), gamma=1.0, sigma=1.0)
        theta = np.array([1.0])
        batch = env.sample(theta, 100_000, make_stream(3, "g2"))
        f_hat = env.f_hat(batch)
        est = fd_jacobian_stub(env.analytic_jacobian(theta))
        out = grad_l2(batch, theta, env, est, f_hat)
        assert abs(out[0] - 1.0) < 0.05


def fd_jacobian_stub(matrix):
    from perf_fl.estimation import JacobianEstimate

    matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    return JacobianEstimate(matrix=matrix, min_singular_value=1.0,
                            source=JacobianSource.LOCAL, dtheta_norm=1.0)


class TestPerformativeGradientOracle:
    def test_assembled_estimate_matches_truth(self):
        # module central check: g1 + g2 -> -mu0 + 2 gamma theta with the
        # analytic Jacobian, relative error < 2% at n = 1e5
        r = np.random.default_rng(123)
        for k in range(10):
            mu0 = float(r.uniform(6, 7))
            gamma = float(r.uniform(1, 3))
            theta = np.array([r.uniform(0.1, 0.75)])
            env = GaussianDemandPricing(mu0=np.array([mu0]), gamma=gamma, sigma=1.0)
            batch = env.sample(theta, 100_000, make_stream(k, "pg"))
            g1, _ = grad_l1(batch, theta, env)
            f_hat = env.f_hat(batch)
            jac = fd_jacobian_stub(env.analytic_jacobian(theta))
            g2 = grad_l2(batch, theta, env, jac, f_hat)
            truth = -mu0 + 2 * gamma * theta[0]
            assert abs((g1 + g2)[0] - truth) / abs(truth) < 0.02


class TestServerJacobian:
    def _linear_window(self, a, rng, H=4, noise=0.0):
        win = HistoryWindow(H=H)
        for _ in range(H + 1):
            theta = rng.normal(size=a.shape[1])
            f = a @ theta + noise * rng.normal(size=a.shape[0])
            win.push(theta, f)
        return win

    def test_singleton_cluster_equals_local(self):
        r = np.random.default_rng(0)
        a = r.normal(size=(2, 2))
        win = self._linear_window(a, r)
        local = fd_jacobian(win)
        clustered = server_jacobian([win])
        np.testing.assert_allclose(clustered.matrix, local.matrix)
        assert clustered.source is JacobianSource.SERVER_CLUSTER

    def test_identical_clients_exact(self):
        r = np.random.default_rng(1)
        a = r.normal(size=(2, 2))
        win = self._linear_window(a, r)
        twin = HistoryWindow(H=win.H)
        thetas, fs = win.stacked()
        for th, f in zip(thetas, fs):
            twin.push(th, f)
        est = server_jacobian([win, twin])
        np.testing.assert_allclose(est.matrix, a, atol=1e-8)

    def test_mixed_dimensions_rejected(self):
        r = np.random.default_rng(2)
        w1 = self._linear_window(r.normal(size=(1, 1)), r)
        w2 = self._linear_window(r.normal(size=(2, 2)), r)
        with pytest.raises(ConfigurationError):
            server_jacobian([w1, w2])

    def test_cluster_averaging_beats_local(self):
        # 100 clients, identical linear f, iid noise on f_hat: the cluster
        # estimate beats the worst local estimate in >= 95/100 trials (and
        # beats the average local error)
        r = np.random.default_rng(3)
        a = np.array([[2.0]])
        wins = 0
        trials = 100
        for _ in range(trials):
            shared_thetas = [r.normal(size=1) for _ in range(5)]
            windows = []
            for _ in range(100):
                w = HistoryWindow(H=4)
                for th in shared_thetas:
                    w.push(th, a @ th + 0.05 * r.normal(size=1))
                windows.append(w)
            cluster_err = abs(server_jacobian(windows).matrix[0, 0] - 2.0)
            local_errs = [abs(fd_jacobian(w).matrix[0, 0] - 2.0) for w in windows]
            if cluster_err < np.mean(local_errs):
                wins += 1
        assert wins >= 95


class TestAdaptiveSampleSize:
    def _state(self, **kw):
        defaults = dict(phi=0.05, Phi=0.5, n_min=1, n_max=100_000,
                        ell_max=1.0, F_hat=1.0, G_hat=1.0, M_hat=0.0,
                        sigma2_hat=1.0)
        defaults.update(kw)
        return AdaptiveSizerState(**defaults)

    def test_reference_value(self):
        # 2 (2 * 1 * 2 * 100 + 1) * 1 * ln 40 / (2 * 0.5) = 2958.48..., ceil 2959
        state = self._state(ell_max=1.0, F_hat=1.0, sigma2_hat=1.0, M_hat=0.0)
        n = adaptive_sample_size(state, H=2, eta=0.1, delta_theta_norm=0.1)
        expected = math.ceil(2 * (2 * 1 * 2 * 100 + 1) * math.log(40) / 1.0)
        assert expected == 2959
        assert n == 2959

    def test_unattainable_bound_returns_max(self):
        state = self._state(M_hat=1e6, n_max=777)
        assert adaptive_sample_size(state, H=2, eta=0.1, delta_theta_norm=0.1) == 777

    def test_loose_bound_returns_min(self):
        state = self._state(Phi=1e12, n_min=25)
        assert adaptive_sample_size(state, H=2, eta=0.1, delta_theta_norm=0.1) == 25

    def test_degenerate_window_clamps(self):
        state = self._state(n_max=500)
        assert adaptive_sample_size(state, H=2, eta=0.1, delta_theta_norm=0.0) == 500

    def test_observe_uses_analytic_curvature(self):
        env = pricing_env()  # linear f: curvature bound 0
        state = self._state(M_hat=123.0)
        batch = env.sample(np.array([1.0]), 50, make_stream(0, "obs"))
        jac = fd_jacobian_stub(np.array([[-2.0]]))
        state.observe(batch, -4.0, jac, np.array([1.0]), env)
        assert state.M_hat == 0.0
        assert state.ell_max == -4.0
        assert state.F_hat == pytest.approx(2.0)
        assert state.G_hat > 0
