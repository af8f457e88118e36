import math

import numpy as np
import pytest
from scipy.special import logsumexp
from scipy.stats import multivariate_normal, norm

from drem.linear_model import (
    Dataset,
    Hyperpriors,
    ModelParams,
    PrecisionCoefficients,
    exhaustive_precision_coefficients,
    gibbs_step_theta,
    linear_full_conditionals,
    log_marginal_component,
    sample_inverse_gamma,
)
from drem.partitions import canonicalize, enumerate_partitions, log_partition_prior
from drem.state import ChainState


def random_instance(rng, n, p=2):
    X = rng.standard_normal((n, p))
    y = rng.standard_normal(n)
    theta = ModelParams(
        beta=rng.standard_normal(p),
        sigma2=float(rng.uniform(0.3, 3.0)),
        tau2=float(rng.uniform(0.3, 3.0)),
    )
    part = canonicalize(rng.integers(0, max(1, n // 2), size=n).tolist())
    return Dataset(y, X), theta, part


def dense_log_density(d, theta, part):
    a = part.to_indicator_matrix()
    cov = theta.sigma2 * np.eye(d.n) + theta.tau2 * (a @ a.T)
    return multivariate_normal(mean=d.X @ theta.beta, cov=cov).logpdf(d.y)


class TestLogMarginalComponent:
    def test_single_observation(self):
        d = Dataset(np.array([1.3]), np.array([[2.0]]))
        theta = ModelParams(beta=np.array([0.5]), sigma2=0.8, tau2=0.6)
        got = log_marginal_component(d, theta, canonicalize([1]))
        want = norm(loc=1.0, scale=math.sqrt(1.4)).logpdf(1.3)
        assert got == pytest.approx(want, abs=1e-12)

    def test_all_singletons(self):
        rng = np.random.default_rng(0)
        d = Dataset(rng.standard_normal(5), rng.standard_normal((5, 2)))
        theta = ModelParams(beta=np.array([0.2, -0.4]), sigma2=1.1, tau2=0.7)
        got = log_marginal_component(d, theta, canonicalize([1, 2, 3, 4, 5]))
        want = norm(loc=d.X @ theta.beta, scale=math.sqrt(1.8)).logpdf(d.y).sum()
        assert got == pytest.approx(want, abs=1e-12)

    def test_against_dense_covariance(self):
        rng = np.random.default_rng(1)
        d, theta, _ = random_instance(rng, 8)
        part = canonicalize([1, 2, 1, 3, 2, 1, 3, 1])
        assert part.k == 3
        assert log_marginal_component(d, theta, part) == pytest.approx(
            dense_log_density(d, theta, part), abs=1e-10
        )

    def test_hundred_random_instances(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            n = int(rng.integers(1, 13))
            d, theta, part = random_instance(rng, n)
            assert log_marginal_component(d, theta, part) == pytest.approx(
                dense_log_density(d, theta, part), abs=1e-10
            )

    def test_permutation_invariance(self):
        rng = np.random.default_rng(3)
        d, theta, part = random_instance(rng, 9)
        perm = rng.permutation(9)
        d2 = Dataset(d.y[perm], d.X[perm])
        part2 = canonicalize(np.asarray(part.assignment)[perm].tolist())
        assert log_marginal_component(d, theta, part) == pytest.approx(
            log_marginal_component(d2, theta, part2), abs=1e-10
        )

    def test_rejects_eta(self):
        rng = np.random.default_rng(4)
        d, theta, part = random_instance(rng, 4)
        theta.eta = np.zeros(part.k)
        with pytest.raises(ValueError):
            log_marginal_component(d, theta, part)


class TestExhaustiveCoefficients:
    def test_single_observation(self):
        d = Dataset(np.array([0.4]), np.array([[1.0]]))
        theta = ModelParams(beta=np.array([0.1]), sigma2=1.0, tau2=1.0)
        coeffs = exhaustive_precision_coefficients(d, theta)
        assert len(coeffs.log_c) == 1
        assert coeffs.kind == "profile"
        assert coeffs.log_c[0] == pytest.approx(
            log_marginal_component(d, theta, canonicalize([1])), abs=1e-12
        )

    def test_n3_against_hand_sum(self):
        rng = np.random.default_rng(5)
        d, theta, _ = random_instance(rng, 3)
        coeffs = exhaustive_precision_coefficients(d, theta)
        by_k = {1: [], 2: [], 3: []}
        for p in enumerate_partitions(3):
            w = sum(math.lgamma(nj) for nj in p.sizes)
            by_k[p.k].append(w + dense_log_density(d, theta, p))
        assert [len(v) for v in by_k.values()] == [1, 3, 1]
        for k in (1, 2, 3):
            assert coeffs.log_c[k - 1] == pytest.approx(logsumexp(by_k[k]), abs=1e-9)

    @pytest.mark.parametrize("m", [0.1, 1.0, 10.0])
    def test_n6_full_likelihood_assembly(self, m):
        rng = np.random.default_rng(6)
        d, theta, _ = random_instance(rng, 6)
        coeffs = exhaustive_precision_coefficients(d, theta)
        ks = np.arange(1, 7)
        assembled = (
            math.lgamma(m)
            - math.lgamma(m + 6)
            + logsumexp(ks * math.log(m) + coeffs.log_c)
        )
        direct = logsumexp(
            [
                log_partition_prior(p, m) + dense_log_density(d, theta, p)
                for p in enumerate_partitions(6)
            ]
        )
        assert np.isfinite(assembled)
        assert assembled == pytest.approx(direct, abs=1e-9)

    def test_cap(self):
        rng = np.random.default_rng(7)
        d, theta, _ = random_instance(rng, 13)
        with pytest.raises(ValueError):
            exhaustive_precision_coefficients(d, theta)


class TestFullConditionals:
    def test_eta_hand_case(self):
        d = Dataset(np.array([2.0]), np.array([[1.0]]))
        theta = ModelParams(beta=np.array([0.0]), sigma2=1.0, tau2=1.0, eta=np.array([0.0]))
        fc = linear_full_conditionals(d, theta, canonicalize([1]), Hyperpriors())
        assert fc.eta_mean[0] == pytest.approx(1.0, abs=1e-12)
        assert fc.eta_var[0] == pytest.approx(0.5, abs=1e-12)

    def test_tau2_hand_case(self):
        rng = np.random.default_rng(8)
        d = Dataset(rng.standard_normal(4), rng.standard_normal((4, 1)))
        theta = ModelParams(
            beta=np.array([0.3]), sigma2=1.0, tau2=1.0, eta=np.array([1.0, 1.0])
        )
        fc = linear_full_conditionals(
            d, theta, canonicalize([1, 1, 2, 2]), Hyperpriors(a1=1.0, b1=1.0)
        )
        assert fc.tau2_shape == pytest.approx(2.0)
        assert fc.tau2_scale == pytest.approx(2.0)

    def test_tau2_to_zero_pins_eta_at_zero(self):
        rng = np.random.default_rng(9)
        d = Dataset(rng.standard_normal(6), rng.standard_normal((6, 2)))
        part = canonicalize([1, 1, 2, 2, 3, 3])
        base = dict(beta=np.array([0.1, 0.2]), sigma2=1.0, eta=np.zeros(3))
        fc_small = linear_full_conditionals(
            d, ModelParams(tau2=1e-12, **base), part, Hyperpriors()
        )
        assert np.all(np.abs(fc_small.eta_mean) < 1e-9)
        assert np.all(fc_small.eta_var < 1e-11)

    def test_dimension_mismatch(self):
        d = Dataset(np.zeros(3), np.ones((3, 1)))
        theta = ModelParams(beta=np.array([0.0]), sigma2=1.0, tau2=1.0, eta=np.array([0.0]))
        with pytest.raises(ValueError):
            linear_full_conditionals(d, theta, canonicalize([1, 1, 2]), Hyperpriors())
        with pytest.raises(ValueError):
            linear_full_conditionals(
                d, theta.without_eta(), canonicalize([1, 1, 1]), Hyperpriors()
            )

    def test_beta_conditional_matches_direct_formula(self):
        rng = np.random.default_rng(10)
        d = Dataset(rng.standard_normal(7), rng.standard_normal((7, 2)))
        part = canonicalize([1, 2, 1, 2, 3, 3, 1])
        theta = ModelParams(
            beta=rng.standard_normal(2),
            sigma2=1.4,
            tau2=0.8,
            eta=rng.standard_normal(3),
        )
        fc = linear_full_conditionals(d, theta, part, Hyperpriors())
        a = part.to_indicator_matrix()
        gram = np.eye(2) + d.X.T @ d.X
        want_mean = np.linalg.solve(gram, d.X.T @ (d.y - a @ theta.eta))
        np.testing.assert_allclose(fc.beta_mean, want_mean, atol=1e-12)
        np.testing.assert_allclose(fc.beta_cov, 1.4 * np.linalg.inv(gram), atol=1e-12)


class TestInverseGamma:
    def test_moment_matches(self):
        rng = np.random.default_rng(11)
        shape, scale = 4.0, 6.0
        draws = np.array([sample_inverse_gamma(shape, scale, rng) for _ in range(100_000)])
        want = scale / (shape - 1.0)
        se = draws.std(ddof=1) / math.sqrt(len(draws))
        assert abs(draws.mean() - want) < 3 * se
        assert np.all(draws > 0)


class TestGibbsStepTheta:
    def setup_state(self, seed=12, n=12):
        rng = np.random.default_rng(seed)
        d = Dataset(rng.standard_normal(n), rng.standard_normal((n, 2)))
        part = canonicalize((np.arange(n) % 3 + 1).tolist())
        theta = ModelParams(
            beta=np.zeros(2), sigma2=1.0, tau2=1.0, eta=np.zeros(part.k)
        )
        return d, ChainState(theta=theta, partition=part)

    def test_deterministic_per_seed(self):
        d, state = self.setup_state()
        out1 = gibbs_step_theta(state, d, Hyperpriors(), np.random.default_rng(99))
        out2 = gibbs_step_theta(state, d, Hyperpriors(), np.random.default_rng(99))
        np.testing.assert_array_equal(out1.beta, out2.beta)
        np.testing.assert_array_equal(out1.eta, out2.eta)
        assert out1.sigma2 == out2.sigma2 and out1.tau2 == out2.tau2

    def test_variance_draws_positive(self):
        d, state = self.setup_state()
        rng = np.random.default_rng(13)
        for _ in range(200):
            theta = gibbs_step_theta(state, d, Hyperpriors(), rng)
            assert theta.sigma2 > 0 and theta.tau2 > 0

    def test_eta_draw_matches_conditional_moments(self):
        d, state = self.setup_state()
        fc = linear_full_conditionals(d, state.theta, state.partition, Hyperpriors())
        rng = np.random.default_rng(14)
        draws = np.array(
            [gibbs_step_theta(state, d, Hyperpriors(), rng).eta for _ in range(40_000)]
        )
        for j in range(state.partition.k):
            se = math.sqrt(fc.eta_var[j] / len(draws))
            assert abs(draws[:, j].mean() - fc.eta_mean[j]) < 3 * se

    def test_marginalized_agrees_with_conjugate_chain(self):
        # fixed partition, n=20: both samplers target the same posterior
        rng = np.random.default_rng(15)
        n, p = 20, 2
        X = rng.standard_normal((n, p))
        part = canonicalize((np.arange(n) % 4 + 1).tolist())
        a = part.to_indicator_matrix()
        eta_true = rng.standard_normal(4) * 1.2
        y = X @ np.array([1.0, -0.5]) + a @ eta_true + 0.7 * rng.standard_normal(n)
        d = Dataset(y, X)
        hp = Hyperpriors()

        def chain_mean(marginalized, seed, iters=8000, burn=1000):
            rng_c = np.random.default_rng(seed)
            theta = ModelParams(beta=np.zeros(p), sigma2=1.0, tau2=1.0, eta=np.zeros(4))
            if marginalized:
                theta = theta.without_eta()
            state = ChainState(theta=theta, partition=part)
            betas = []
            for t in range(iters):
                state.theta = gibbs_step_theta(state, d, hp, rng_c, marginalized)
                if t >= burn:
                    betas.append(state.theta.beta.copy())
            betas = np.asarray(betas)
            nb = 20
            batch = betas[: (len(betas) // nb) * nb].reshape(nb, -1, p).mean(axis=1)
            return betas.mean(axis=0), batch.std(axis=0, ddof=1) / math.sqrt(nb)

        mean_c, se_c = chain_mean(False, 100)
        mean_m, se_m = chain_mean(True, 101)
        for j in range(p):
            se = math.hypot(se_c[j], se_m[j])
            assert abs(mean_c[j] - mean_m[j]) < 3 * se


class TestPrecisionCoefficientsType:
    def test_validation(self):
        with pytest.raises(ValueError):
            PrecisionCoefficients(log_c=np.array([0.0]), kind="bogus")
        with pytest.raises(ValueError):
            PrecisionCoefficients(log_c=np.array([np.inf]), kind="profile")
        c = PrecisionCoefficients(log_c=np.array([-np.inf, 0.0]), kind="profile")
        assert c.n == 2
