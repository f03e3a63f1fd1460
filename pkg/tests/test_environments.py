import numpy as np
import pytest
from scipy.stats import norm

from perf_fl.core import ConfigurationError, make_stream
from perf_fl.environments import (
    AppendixLinearContribution,
    ContaminatedClient,
    ContributionPricing,
    ContributionRegression,
    GaussianContaminant,
    GaussianDemandPricing,
    HousePricingRegression,
    SampleBatch,
    StrategicClassification,
    closed_form_optima,
    draw_batch,
    estimate_f_hat,
    numeric_performative_optimum,
    performative_loss,
    strategic_response,
)
from perf_fl.core import ParameterBox


def rng(label="t", seed=0):
    return make_stream(seed, label)


def all_environments():
    """One desk-scale instance per concrete environment family."""
    return [
        GaussianDemandPricing(mu0=np.array([6.0, 7.0]), gamma=2.0, sigma=1.0),
        ContributionPricing(group_means=np.array([[3.0], [1.0]]), sigma=0.5, budget=10.0),
        AppendixLinearContribution(a1=0.5, a2=-0.5, sigma=0.5),
        StrategicClassification(mu0=np.array([1.0]), mu1=np.array([-1.0]),
                                gamma0=0.02, gamma1=3.0, ridge=0.01),
        HousePricingRegression(mu_x=np.array([1.0]), a=np.array([1.0]), gamma=1.5,
                               noise_sigma=1.0, ridge=10.0 / 3.0),
        ContributionRegression(slopes=np.array([[1.0], [3.0]]), mu_x=np.array([1.0]),
                               noise_sigma=2.0, c=1.0, ridge=10.0 / 3.0),
    ]


def env_theta(env):
    """A generic interior point for each family."""
    return np.full(env.dim, 0.3)


class TestDrawBatch:
    def test_no_contamination_flags(self):
        env = GaussianDemandPricing(mu0=np.array([6.0]), gamma=2.0, sigma=1.0)
        client = ContaminatedClient(env=env, epsilon=0.0)
        batch = draw_batch(client, np.array([1.0]), 200, rng("a"), rng("b"), rng("c"))
        assert len(batch) == 200
        assert batch.is_contaminant.sum() == 0

    def test_full_contamination(self):
        env = GaussianDemandPricing(mu0=np.array([6.0]), gamma=2.0, sigma=1.0)
        q = GaussianContaminant(mu=np.array([20.0]), sigma=1.0)
        client = ContaminatedClient(env=env, epsilon=1.0, contaminant=q)
        batch = draw_batch(client, np.array([1.0]), 200, rng("a"), rng("b"), rng("c"))
        assert batch.is_contaminant.all()
        assert abs(batch.z.mean() - 20.0) < 0.5

    def test_induced_mean_matches_map(self):
        # mean = mu0 - gamma * theta; CLT tolerance 5 sigma / sqrt(n)
        env = GaussianDemandPricing(mu0=np.array([6.0]), gamma=2.0, sigma=1.0)
        client = ContaminatedClient(env=env, epsilon=0.0)
        batch = draw_batch(client, np.array([1.0]), 100_000, rng("a"), rng("b"), rng("c"))
        assert abs(batch.z.mean() - 4.0) < 0.02

    def test_contamination_rate(self):
        env = GaussianDemandPricing(mu0=np.array([6.0]), gamma=2.0, sigma=1.0)
        q = GaussianContaminant(mu=np.array([20.0]), sigma=1.0)
        client = ContaminatedClient(env=env, epsilon=0.2, contaminant=q)
        batch = draw_batch(client, np.array([1.0]), 1_000_000, rng("a"), rng("b"), rng("c"))
        rate = batch.is_contaminant.mean()
        assert 0.198 <= rate <= 0.202


class TestEstimateFHat:
    def test_distribution_mean(self):
        env = GaussianDemandPricing(mu0=np.array([0.0, 0.0]), gamma=1.0, sigma=1.0)
        batch = SampleBatch(z=np.array([[1.0, 2.0], [3.0, 4.0]]))
        np.testing.assert_allclose(estimate_f_hat(env, batch), [2.0, 3.0])

    def test_group_proportions(self):
        env = AppendixLinearContribution()
        batch = SampleBatch(z=np.zeros((5, 1)), group=np.array([0, 0, 1, 1, 1]))
        np.testing.assert_allclose(estimate_f_hat(env, batch), [0.4, 0.6])

    def test_large_sample_concentration(self):
        env = GaussianDemandPricing(mu0=np.array([3.0]), gamma=0.0, sigma=1.0)
        batch = env.sample(np.array([0.0]), 100_000, rng("clt"))
        assert abs(estimate_f_hat(env, batch)[0] - 3.0) < 0.02

    def test_contribution_without_labels_rejected(self):
        env = AppendixLinearContribution()
        batch = SampleBatch(z=np.zeros((3, 1)))
        with pytest.raises(ConfigurationError):
            estimate_f_hat(env, batch)

    def test_regression_fhat_recovers_coefficients(self):
        env = HousePricingRegression(mu_x=np.array([1.0]), a=np.array([2.0]), gamma=0.5,
                                     noise_sigma=0.5)
        theta = np.array([0.4])
        batch = env.sample(theta, 50_000, rng("ols"))
        np.testing.assert_allclose(env.f_hat(batch), env.f(theta), atol=0.02)


class TestScore:
    def test_gaussian_unit_variance(self):
        env = GaussianDemandPricing(mu0=np.array([0.0]), gamma=0.0, sigma=1.0)
        out = env.score(np.array([[4.0]]), np.array([3.0]))
        np.testing.assert_allclose(out, [[1.0]])

    def test_gaussian_sigma_two(self):
        env = GaussianDemandPricing(mu0=np.array([0.0, 0.0]), gamma=0.0, sigma=2.0)
        out = env.score(np.array([[2.0, -2.0]]), np.array([0.0, 0.0]))
        np.testing.assert_allclose(out, [[0.5, -0.5]])

    def test_mixture_score_at_separated_group_mean(self):
        # z at group-1 mean, group 2 far away: entries -> (2, 0) at nu = (1/2, 1/2)
        env = ContributionPricing(group_means=np.array([[0.0], [40.0]]), sigma=1.0,
                                  budget=100.0)
        out = env.score(np.array([[0.0]]), np.array([0.5, 0.5]))
        p1 = norm.pdf(0.0, 0.0, 1.0)
        p2 = norm.pdf(0.0, 40.0, 1.0)
        expected = np.array([p1, p2]) / (0.5 * p1 + 0.5 * p2)
        np.testing.assert_allclose(out[0], expected, rtol=1e-9)
        assert out[0, 0] == pytest.approx(2.0, abs=1e-6)
        assert out[0, 1] == pytest.approx(0.0, abs=1e-6)

    def test_mixture_zero_fraction_is_safe(self):
        env = AppendixLinearContribution()
        out = env.score(np.array([[0.5]]), np.array([1.0, 0.0]))
        assert np.all(np.isfinite(out))


class TestStrategicResponse:
    def test_direct_formula(self):
        np.testing.assert_allclose(
            strategic_response(np.array([1.0, 2.0]), 0.5, np.array([2.0, 2.0])), [0.0, 1.0]
        )

    def test_no_manipulation_without_budget(self):
        x = np.array([1.5, -0.5])
        np.testing.assert_array_equal(strategic_response(x, 0.0, np.array([1.0, 1.0])), x)

    def test_best_response_on_grid(self):
        # x - gamma * theta maximizes -<x', theta> - ||x' - x||^2 / (2 gamma)
        r = np.random.default_rng(11)
        for _ in range(5):
            x = r.normal(size=2)
            theta = r.normal(size=2)
            gamma = float(r.uniform(0.2, 2.0))
            best = strategic_response(x, gamma, theta)

            def utility(xp):
                return -xp @ theta - np.dot(xp - x, xp - x) / (2 * gamma)

            u_best = utility(best)
            for dx in np.linspace(-3, 3, 25):
                for dy in np.linspace(-3, 3, 25):
                    assert utility(best + np.array([dx, dy])) <= u_best + 1e-9


class TestAnalyticJacobians:
    @pytest.mark.parametrize("env", all_environments(), ids=lambda e: type(e).__name__)
    def test_matches_finite_difference(self, env):
        # central difference of f at h=1e-5 within 1e-4, random interior theta
        r = np.random.default_rng(5)
        for _ in range(3):
            theta = r.uniform(0.05, 0.45, size=env.dim)
            jac = env.analytic_jacobian(theta)
            assert jac is not None
            h = 1e-5
            for j in range(env.dim):
                e = np.zeros(env.dim)
                e[j] = h
                fd = (env.f(theta + e) - env.f(theta - e)) / (2 * h)
                assert np.max(np.abs(fd - jac[:, j])) <= 1e-4


class TestFractions:
    @pytest.mark.parametrize(
        "env",
        [
            ContributionPricing(group_means=np.array([[3.0], [1.0]]), sigma=0.5, budget=10.0),
            AppendixLinearContribution(),
            ContributionRegression(slopes=np.array([[1.0], [3.0]]), mu_x=np.array([1.0])),
        ],
        ids=lambda e: type(e).__name__,
    )
    def test_normalized_over_theta_grid(self, env):
        lo, hi = (-0.9, 0.9) if env.dim == 1 else (0, 0)
        for t in np.linspace(lo, hi, 41):
            theta = np.array([t])
            if isinstance(env, ContributionPricing):
                theta = np.array([abs(t) * 3.0])  # its box is [0, 3.1]
            nu = env.fractions(theta)
            assert nu.min() >= 0.0
            assert nu.sum() == pytest.approx(1.0, abs=1e-12)


class TestClosedForms:
    def test_demand_pricing_derived(self):
        # stationarity of L(theta) = -theta (mu0 - gamma theta): theta_po = mu0 / (2 gamma)
        # fixed point of the decoupled gradient: theta_ps = mu0 / gamma
        env = GaussianDemandPricing(mu0=np.array([6.0]), gamma=2.0, sigma=1.0)
        out = closed_form_optima([ContaminatedClient(env=env)])
        assert out.theta_po == pytest.approx([1.5])
        assert out.theta_ps == pytest.approx([3.0])

    def test_linear_contribution_coincidence(self):
        # a1 + a2 = 0 makes the optimal and stable points coincide at zero
        env = AppendixLinearContribution(a1=0.5, a2=-0.5)
        out = closed_form_optima([ContaminatedClient(env=env)])
        assert out.theta_po == pytest.approx([0.0], abs=1e-15)
        assert out.theta_ps == pytest.approx([0.0], abs=1e-15)

    def test_linear_contribution_general(self):
        env = AppendixLinearContribution(a1=0.7, a2=-0.3)
        out = closed_form_optima([ContaminatedClient(env=env)])
        assert out.theta_po == pytest.approx([(0.7 - 0.3) / (2 * (0.7 + 0.3))])
        assert out.theta_ps == pytest.approx([(0.7 - 0.3) / (0.7 + 0.3)])

    def test_static_data_collapses_both(self):
        env = GaussianDemandPricing(mu0=np.array([6.0]), gamma=0.0, sigma=1.0)
        assert closed_form_optima([ContaminatedClient(env=env)]) is None

    def test_house_pricing_scalar(self):
        m = 1.0 + 1.0  # E[X^2] = sigma_x^2 + mu^2
        gamma, lam, a = 1.5, 10.0 / 3.0, 1.0
        env = HousePricingRegression(mu_x=np.array([1.0]), a=np.array([a]), gamma=gamma,
                                     ridge=lam)
        out = closed_form_optima([ContaminatedClient(env=env)])
        assert out.theta_po == pytest.approx([(1 + gamma) * m * a / ((1 + gamma) ** 2 * m + lam)])
        assert out.theta_ps == pytest.approx([m * a / (m * (1 + gamma) + lam)])

    @pytest.mark.parametrize(
        "clients",
        [
            [ContaminatedClient(env=GaussianDemandPricing(mu0=np.array([6.0 + 0.1 * i]),
                                                          gamma=1.0 + 0.4 * i, sigma=1.0),
                                alpha=0.2 + 0.1 * i) for i in range(3)],
            [ContaminatedClient(env=HousePricingRegression(mu_x=np.array([1.0]),
                                                           a=np.array([4.0]),
                                                           gamma=1.0 + 0.5 * i,
                                                           ridge=10.0 / 3.0),
                                alpha=1.0) for i in range(3)],
            [ContaminatedClient(env=AppendixLinearContribution(a1=0.6, a2=-0.5), alpha=1.0),
             ContaminatedClient(env=AppendixLinearContribution(a1=0.4, a2=-0.55), alpha=2.0)],
        ],
        ids=["demand", "house", "linear-contribution"],
    )
    def test_weighted_po_matches_numeric_minimizer(self, clients):
        box = ParameterBox(np.array([-0.9]), np.array([3.0]))
        if isinstance(clients[0].env, AppendixLinearContribution):
            box = ParameterBox(np.array([-0.95]), np.array([0.95]))
        out = closed_form_optima(clients)
        numeric = numeric_performative_optimum(clients, box)
        np.testing.assert_allclose(out.theta_po, numeric, atol=5e-6)


class TestPerformativeLoss:
    def test_monte_carlo_matches_closed_form(self):
        env = GaussianDemandPricing(mu0=np.array([6.0]), gamma=2.0, sigma=1.0)
        clients = [ContaminatedClient(env=env)]
        # L(theta) = -theta (mu0 - gamma theta); L(1) = -4, L(1.5) = -4.5
        mc = performative_loss(clients, np.array([1.0]), 200_000, rng("pl"))
        assert mc == pytest.approx(-4.0, abs=0.02)
        closed = performative_loss(clients, np.array([1.5]), 1, use_closed_form=True)
        assert closed == pytest.approx(-4.5)

    def test_contamination_never_enters_evaluation(self):
        env = GaussianDemandPricing(mu0=np.array([6.0]), gamma=2.0, sigma=1.0)
        dirty = [ContaminatedClient(env=env, epsilon=0.4,
                                    contaminant=GaussianContaminant(np.array([50.0]), 1.0))]
        clean = [ContaminatedClient(env=env)]
        a = performative_loss(dirty, np.array([1.0]), 5000, rng("e"))
        b = performative_loss(clean, np.array([1.0]), 5000, rng("e"))
        assert a == b

    def test_optimum_beats_random_points(self):
        # L(theta_po) below 100 random box points, 3 standard-error slack
        env = GaussianDemandPricing(mu0=np.array([6.0]), gamma=2.0, sigma=1.0)
        clients = [ContaminatedClient(env=env)]
        n_eval = 4000
        best = performative_loss(clients, np.array([1.5]), n_eval, rng("opt"))
        r = np.random.default_rng(12)
        for k in range(100):
            theta = r.uniform(0.0, 5.0, size=1)
            val = performative_loss(clients, theta, n_eval, rng(f"rand{k}"))
            se = abs(theta[0]) * 1.0 / np.sqrt(n_eval)  # std of -theta z draws
            assert best <= val + 3 * se + 1e-9

    def test_zero_loss_stub(self):
        env = GaussianDemandPricing(mu0=np.array([4.0]), gamma=1.0, sigma=1.0)
        clients = [ContaminatedClient(env=env)]
        assert performative_loss(clients, np.zeros(1), 1000, rng("z")) == 0.0


class TestExpectedLossConsistency:
    @pytest.mark.parametrize("env", all_environments(), ids=lambda e: type(e).__name__)
    def test_analytic_matches_monte_carlo(self, env):
        theta = env_theta(env)
        analytic = env.expected_loss(theta)
        if analytic is None:
            pytest.skip("no analytic expectation for this family")
        batch = env.sample(theta, 400_000, rng("el"))
        mc = float(env.loss(batch.z, theta).mean())
        se = float(env.loss(batch.z, theta).std() / np.sqrt(len(batch)))
        assert abs(mc - analytic) < 5 * se + 1e-6
