"""Tests for the ground-truth demand environment."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sarpricing.demand import (
    DriftSpec,
    EnvironmentState,
    ParameterBounds,
    TrueParameters,
    advance_environment,
    allocate_arrivals,
    drift_step,
    expected_revenue,
    imbalanced_weights,
    purchase_prob_conditional,
    purchase_prob_marginal,
    sample_demand,
)
from sarpricing.errors import ConfigurationError
from sarpricing.network import NetworkStructure, build_rbf_network
from sarpricing.numerics import NoiseFamily


def _network(L=6, seed=0, width=1.5):
    feats = np.random.default_rng(seed).standard_normal((L, 3))
    return build_rbf_network(feats, width)


def _state(seed=0, drift=(), tau=1.0, rho=0.3, L=6, freeze=False, arrivals=None):
    net = _network(L)
    params = TrueParameters(-0.4, np.array([0.1, 0.15]), rho=rho, tau=tau)
    n = np.full(L, 20) if arrivals is None else arrivals
    return EnvironmentState(net, params, n, np.random.default_rng(seed), drift=drift, freeze_covariates=freeze)


class TestDriftStep:
    def test_infinite_exponent_is_static(self):
        rng = np.random.default_rng(0)
        spec = DriftSpec(math.inf)
        assert drift_step(-0.4, 7, spec, rng) == -0.4
        np.testing.assert_array_equal(drift_step(np.array([0.1, 0.2]), 3, spec, rng), [0.1, 0.2])

    def test_scalar_coin_flip(self):
        rng = np.random.default_rng(1)
        steps = {round(drift_step(1.0, 4, DriftSpec(1.0, 0.1), rng) - 1.0, 12) for _ in range(50)}
        assert steps == {0.025, -0.025}

    def test_vector_norm(self):
        rng = np.random.default_rng(2)
        out = drift_step(np.zeros(2), 1, DriftSpec(1.0, 0.1), rng)
        assert np.linalg.norm(out) == pytest.approx(0.1, abs=1e-15)

    def test_round_zero_rejected(self):
        with pytest.raises(ConfigurationError):
            drift_step(0.0, 0, DriftSpec(1.0), np.random.default_rng(0))

    @pytest.mark.parametrize("kw", [dict(exponent=0.0), dict(exponent=-1.0), dict(magnitude=-0.1),
                                    dict(applies_to="tau")])
    def test_bad_spec(self, kw):
        with pytest.raises(ConfigurationError):
            DriftSpec(**kw)


class TestPurchaseProbability:
    def test_zero_index_is_half(self):
        for fam in (NoiseFamily("gaussian"), NoiseFamily("laplace"), NoiseFamily("student_t", 4)):
            params = TrueParameters(-1.0, np.array([0.5]), noise=fam)
            # alpha + beta p + x'mu = 0.3 - 1.0 + 0.7 = 0
            assert purchase_prob_conditional(0.3, params, np.array([1.4]), 1.0) == pytest.approx(0.5)

    def test_gaussian_example(self):
        params = TrueParameters(-1.0, np.zeros(1))
        assert purchase_prob_conditional(1.0, params, np.zeros(1), 1.0) == pytest.approx(0.5)

    def test_large_price_limit(self):
        params = TrueParameters(-1.0, np.zeros(1))
        assert purchase_prob_conditional(0.0, params, np.zeros(1), 40.0) < 1e-300

    def test_monotone_random_configurations(self):
        rng = np.random.default_rng(5)
        for _ in range(1000):
            beta = -rng.uniform(0.1, 2.0)
            mu = rng.uniform(-0.5, 0.5, 2)
            mu *= min(1.0, 1.0 / np.linalg.norm(mu))
            params = TrueParameters(beta, mu, sigma=rng.uniform(0.3, 2.0))
            x = rng.standard_exponential(2)
            x /= max(1.0, np.linalg.norm(x))
            a, p, h = rng.normal(), rng.uniform(0, 5), rng.uniform(0.01, 0.5)
            q = purchase_prob_conditional(a, params, x, p)
            assert purchase_prob_conditional(a, params, x, p + h) < q
            assert purchase_prob_conditional(a + h, params, x, p) > q

    def test_marginal_zero_index(self):
        assert purchase_prob_marginal(-1.0, np.array([0.5]), np.array([0.4]), 0.2) == pytest.approx(0.5)

    def test_marginal_at_reference_price(self):
        assert abs(purchase_prob_marginal(-1.0, np.zeros(1), np.zeros(1), 0.7518) - 0.2261) < 1e-4

    def test_marginal_is_alpha_average(self):
        # Gaussian convolution: E_alpha Phi((alpha + s)/sigma) = Phi(s/V), V^2 = sigma^2 + v^2
        rng = np.random.default_rng(11)
        beta, mu, sigma, v = -0.7, np.array([0.3]), 1.0, 1.3
        x, p = np.array([0.6]), 0.9
        V = math.hypot(sigma, v)
        alpha = v * rng.standard_normal(200_000)
        q = purchase_prob_conditional(alpha, TrueParameters(beta, mu, sigma=sigma), x, p)
        target = purchase_prob_marginal(beta / V, mu / V, x, p)
        assert abs(q.mean() - target) <= 3 * q.std(ddof=1) / math.sqrt(q.size)


class TestSampleDemand:
    def test_degenerate_probabilities(self):
        rng = np.random.default_rng(0)
        assert sample_demand(17, 1.0, rng) == 17
        assert sample_demand(17, 0.0, rng) == 0

    def test_binomial_band(self):
        draws = sample_demand(np.full(1000, 10_000), 0.3, np.random.default_rng(3))
        assert abs(draws.mean() - 3000) <= 45
        assert np.all((draws >= 0) & (draws <= 10_000))

    @settings(max_examples=50, deadline=None)
    @given(n=st.integers(0, 500), q=st.floats(0, 1), seed=st.integers(0, 2**32 - 1))
    def test_range(self, n, q, seed):
        y = sample_demand(n, q, np.random.default_rng(seed))
        assert 0 <= y <= n


class TestExpectedRevenue:
    def test_examples(self):
        assert expected_revenue(100, 0.0, 0.7) == 0.0
        assert expected_revenue(100, 1.0, 0.5) == 50.0

    def test_reference_price_beats_neighbours(self):
        params = TrueParameters(-1.0, np.zeros(1))

        def rev(p):
            return expected_revenue(1, p, purchase_prob_conditional(0.0, params, np.zeros(1), p))

        grid = np.linspace(0, 3, 3001)
        best = grid[np.argmax([rev(p) for p in grid])]
        assert abs(best - 0.7518) < 1e-3
        assert rev(0.7518) > rev(0.7518 - 0.05)
        assert rev(0.7518) > rev(0.7518 + 0.05)

    def test_vectorised(self):
        np.testing.assert_allclose(expected_revenue(np.array([1, 2]), np.array([1.0, 2.0]), np.array([0.5, 0.25])),
                                   [0.5, 1.0])


class TestArrivals:
    def test_allocation_sums(self):
        n = allocate_arrivals(1000, [3.0, 1.0, 1.0, 0.5])
        assert n.sum() == 1000
        np.testing.assert_array_equal(n, [545, 182, 182, 91])

    def test_allocation_rejects_bad_weights(self):
        with pytest.raises(ConfigurationError):
            allocate_arrivals(10, [0.0, 0.0])
        with pytest.raises(ConfigurationError):
            allocate_arrivals(10, [1.0, -1.0])

    def test_imbalance_share(self):
        base = np.arange(1, 9, dtype=float)
        w = imbalanced_weights(base, 0.8)
        assert w[::2].sum() == pytest.approx(0.8)
        assert w[1::2].sum() == pytest.approx(0.2)
        # within-group proportions are kept
        np.testing.assert_allclose(w[::2] / w[::2].sum(), base[::2] / base[::2].sum())

    def test_imbalance_rejects_bad_share(self):
        with pytest.raises(ConfigurationError):
            imbalanced_weights([1.0, 1.0], 1.0)


class TestEnvironment:
    def test_static_drift(self):
        st_ = _state(drift=(DriftSpec(math.inf, 0.1, "beta"), DriftSpec(math.inf, 0.1, "mu")))
        rounds = [st_.advance() for _ in range(50)]
        assert all(r.params.beta == -0.4 for r in rounds)
        assert all(np.array_equal(r.params.mu, [0.1, 0.15]) for r in rounds)

    def test_zero_tau_gives_zero_alpha(self):
        st_ = _state(tau=0.0)
        for _ in range(10):
            np.testing.assert_array_equal(st_.advance().alpha, 0.0)

    def test_arrivals_emitted(self):
        n = np.array([50] * 3 + [200] * 3)
        st_ = _state(arrivals=n)
        np.testing.assert_array_equal(st_.advance().n, n)
        np.testing.assert_array_equal(st_.rollout(5).n, np.tile(n, (5, 1)))

    def test_covariate_norm(self):
        traj = _state(seed=3).rollout(2000)
        assert np.all(np.linalg.norm(traj.x, axis=-1) <= 1.0 + 1e-12)
        assert np.all(traj.x >= 0)

    def test_frozen_covariates(self):
        traj = _state(freeze=True).rollout(20)
        np.testing.assert_array_equal(traj.x[0], traj.x[-1])

    def test_reproducible(self):
        s1 = _state(seed=9, drift=(DriftSpec(1.0, 0.1, "beta"),))
        s2 = _state(seed=9, drift=(DriftSpec(1.0, 0.1, "beta"),))
        for _ in range(30):
            r1, r2 = s1.advance(), s2.advance()
            assert r1.params.beta == r2.params.beta
            np.testing.assert_array_equal(r1.alpha, r2.alpha)
            np.testing.assert_array_equal(r1.x, r2.x)

    def test_rollout_matches_advance(self):
        drift = (DriftSpec(1.0, 0.1, "beta"), DriftSpec(0.5, 0.1, "mu"))
        traj = _state(seed=4, drift=drift).rollout(40)
        s = _state(seed=4, drift=drift)
        for i in range(40):
            r = advance_environment(s)
            assert r.params.beta == traj.beta[i]
            np.testing.assert_array_equal(r.params.mu, traj.mu[i])
            np.testing.assert_array_equal(r.alpha, traj.alpha[i])
            np.testing.assert_array_equal(r.x, traj.x[i])

    def test_alpha_covariance(self):
        st_ = _state(seed=2, rho=0.3)
        traj = st_.rollout(40_000)
        cov = st_.prior(0.3).covariance()
        emp = np.cov(traj.alpha.T)
        # entrywise standard error of a Gaussian sample covariance
        se = np.sqrt((cov**2 + np.outer(np.diag(cov), np.diag(cov))) / traj.alpha.shape[0])
        assert np.all(np.abs(emp - cov) <= 4 * se)

    def test_drift_budget(self):
        T = 5000
        drift = (DriftSpec(1.0, 0.1, "beta"), DriftSpec(1.0, 0.1, "mu"))
        traj = _state(seed=6, drift=drift).rollout(T)
        bound = 0.1 * (1 + math.log(T))
        assert traj.drift_totals["beta"] <= bound
        assert traj.drift_totals["mu"] <= bound
        assert np.sum(np.abs(np.diff(traj.beta))) <= bound

    def test_drift_stays_in_bounds(self):
        # magnitude large enough to leave the box without the projection
        drift = (DriftSpec(0.5, 1.0, "beta"), DriftSpec(0.5, 1.0, "mu"))
        traj = _state(seed=7, drift=drift).rollout(500)
        b = ParameterBounds()
        assert np.all((-traj.beta >= b.c_beta - 1e-12) & (-traj.beta <= b.C_beta + 1e-12))
        assert np.all(np.linalg.norm(traj.mu, axis=1) <= b.C_mu + 1e-12)

    def test_rho_drift_rejection_holds(self):
        net = NetworkStructure(np.array([[0.0, 1.0], [1.0, 0.0]]))
        params = TrueParameters(-0.4, np.array([0.1]), rho=0.9)
        s = EnvironmentState(net, params, np.array([5, 5]), np.random.default_rng(0),
                             drift=(DriftSpec(0.5, 0.5, "rho"),))
        traj = s.rollout(200)
        assert np.all(traj.rho * net.omega_max <= 1 - 0.05 + 1e-12)
        assert traj.drift_totals["rho_rejections"] > 0

    def test_infeasible_initial_rho(self):
        with pytest.raises(ConfigurationError):
            _state(rho=5.0)

    def test_arrival_shape_checked(self):
        with pytest.raises(ConfigurationError):
            _state(arrivals=np.array([1, 2]))
