from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from latentseq import ndgrad as nd
from latentseq.dists import (
    PROB_FLOOR,
    BernoulliMF,
    CategoricalLogits,
    DiagGaussian,
    bernoulli_kl,
    gaussian_kl,
    gaussian_rsample,
    gumbel_softmax,
    straight_through,
    straight_through_bernoulli,
)
from latentseq.ndgrad import Value, gradcheck

vec = st.integers(1, 5).flatmap(
    lambda d: st.tuples(
        arrays(np.float64, d, elements=st.floats(-3, 3)),
        arrays(np.float64, d, elements=st.floats(-2, 2)),
        arrays(np.float64, d, elements=st.floats(-3, 3)),
        arrays(np.float64, d, elements=st.floats(-2, 2)),
    )
)


class TestGaussianKL:
    def test_identical_is_zero(self):
        q = DiagGaussian(np.array([0.3, -1.0]), np.array([0.2, -0.5]))
        assert gaussian_kl(q, q).item() == 0.0

    def test_unit_variance_reduces_to_half_norm(self):
        mu = np.array([1.0, -2.0, 0.5])
        kl = gaussian_kl(DiagGaussian(mu, np.zeros(3)), DiagGaussian.standard(3)).item()
        np.testing.assert_allclose(kl, 0.5 * mu @ mu, rtol=1e-15)

    def test_wide_vs_standard_monte_carlo(self):
        q = DiagGaussian(np.zeros(1), np.array([np.log(2.0)]))
        p = DiagGaussian.standard(1)
        analytic = gaussian_kl(q, p).item()
        np.testing.assert_allclose(analytic, 1.5 - np.log(2.0), rtol=1e-14)
        z = q.sample(np.random.default_rng(42), 10**6)
        terms = q.log_prob(z).data - p.log_prob(z).data
        se = terms.std(ddof=1) / np.sqrt(terms.size)
        assert abs(terms.mean() - analytic) <= 3 * se

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            gaussian_kl(DiagGaussian.standard(2), DiagGaussian.standard(3))

    @settings(max_examples=60, deadline=None)
    @given(vec)
    def test_nonnegative_and_zero_iff_equal(self, params):
        m1, s1, m2, s2 = params
        q, p = DiagGaussian(m1, s1), DiagGaussian(m2, s2)
        kl = gaussian_kl(q, p).item()
        assert kl >= -1e-12
        if np.allclose(m1, m2, atol=1e-3) and np.allclose(s1, s2, atol=1e-3):
            assert kl < 1e-4
        else:
            assert kl > 0.0

    def test_gradcheck_all_parameters(self):
        rng = np.random.default_rng(42)
        x0 = rng.normal(size=(4, 3))

        def f(x):
            return gaussian_kl(DiagGaussian(x[0], x[1]), DiagGaussian(x[2], x[3]))

        assert gradcheck(f, x0) <= 1e-6


class TestRsample:
    def test_zero_noise_returns_mean(self):
        q = DiagGaussian(np.array([1.0, 2.0]), np.array([0.5, -0.5]))
        np.testing.assert_array_equal(gaussian_rsample(q, np.zeros(2)).data, [1.0, 2.0])

    def test_clamped_floor_collapses_to_mean(self):
        q = DiagGaussian(np.array([1.0]), np.array([-1e6]))
        z = gaussian_rsample(q, np.array([3.0])).item()
        np.testing.assert_allclose(z, 1.0 + np.exp(-10.0) * 3.0, rtol=1e-15)
        assert abs(z - 1.0) < 1e-3

    def test_moments(self):
        mean, log_std = np.array([0.5, -1.0]), np.array([0.3, -0.7])
        q = DiagGaussian(mean, log_std)
        eps = np.random.default_rng(42).standard_normal((10**5, 2))
        z = gaussian_rsample(q, eps).data
        n = z.shape[0]
        var = np.exp(2 * log_std)
        # four simultaneous checks share the two-sided 3-SE level (p = 0.0027) via Bonferroni
        bound = stats.norm.isf(stats.norm.sf(3.0) / 4)
        assert np.all(np.abs(z.mean(0) - mean) <= bound * np.sqrt(var / n))
        # variance of the sample variance for a Gaussian is 2 sigma^4 / (n - 1)
        assert np.all(np.abs(z.var(0, ddof=1) - var) <= bound * np.sqrt(2 * var**2 / (n - 1)))

    def test_gradient_flows(self):
        mean = Value(np.array([0.5]), requires_grad=True)
        log_std = Value(np.array([0.2]), requires_grad=True)
        nd.backward(nd.vsum(gaussian_rsample(DiagGaussian(mean, log_std), np.array([1.5]))))
        np.testing.assert_allclose(mean.grad, [1.0])
        np.testing.assert_allclose(log_std.grad, [np.exp(0.2) * 1.5])

    def test_invalid_log_std(self):
        with pytest.raises(ValueError):
            DiagGaussian(np.zeros(1), np.array([np.nan]))


class TestBernoulliKL:
    def test_identical_is_zero(self):
        q = BernoulliMF.from_probs([0.2, 0.9])
        np.testing.assert_allclose(bernoulli_kl(q, q).item(), 0.0, atol=1e-15)

    def test_near_one_vs_half_tends_to_log2(self):
        kl = bernoulli_kl(BernoulliMF.from_probs([1.0]), BernoulliMF.from_probs([0.5])).item()
        np.testing.assert_allclose(kl, np.log(2.0), atol=1e-5)

    def test_exact_boundaries_finite(self):
        kl = bernoulli_kl(BernoulliMF.from_probs([0.0, 1.0]), BernoulliMF.from_probs([1.0, 0.0])).item()
        assert np.isfinite(kl)

    def test_three_quarters_vs_half(self):
        kl = bernoulli_kl(BernoulliMF.from_probs([0.75]), BernoulliMF.from_probs([0.5])).item()
        # exhaustive expectation over the two outcomes of q
        outcomes = np.array([1.0, 0.0])
        q_p = np.array([0.75, 0.25])
        log_ratio = np.log(np.where(outcomes == 1, 0.75, 0.25)) - np.log(0.5)
        np.testing.assert_allclose(kl, q_p @ log_ratio, rtol=1e-12)
        np.testing.assert_allclose(kl, 0.130812, atol=1e-6)

    def test_asymmetry(self):
        a, b = BernoulliMF.from_probs([0.75]), BernoulliMF.from_probs([0.5])
        assert abs(bernoulli_kl(a, b).item() - bernoulli_kl(b, a).item()) > 1e-3

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 6).flatmap(lambda n: st.tuples(
        arrays(np.float64, n, elements=st.floats(0.0, 1.0)), arrays(np.float64, n, elements=st.floats(0.0, 1.0)))))
    def test_nonnegative(self, pq):
        q, p = pq
        kl = bernoulli_kl(BernoulliMF.from_probs(q), BernoulliMF.from_probs(p)).item()
        assert np.isfinite(kl) and kl >= -1e-12

    def test_gradcheck(self):
        rng = np.random.default_rng(42)
        x0 = rng.normal(size=(2, 4))
        assert gradcheck(lambda x: bernoulli_kl(BernoulliMF(x[0]), BernoulliMF(x[1])), x0) <= 1e-6

    def test_log_prob_enumerates_to_one(self):
        q = BernoulliMF.from_probs([0.3, 0.8, 0.5])
        masks = np.array([[(k >> i) & 1 for i in range(3)] for k in range(8)], dtype=float)
        np.testing.assert_allclose(np.exp(q.log_prob(masks).data).sum(), 1.0, rtol=1e-12)


class TestGumbelSoftmax:
    @settings(max_examples=60, deadline=None)
    @given(
        arrays(np.float64, 4, elements=st.floats(-20, 20)),
        arrays(np.float64, 4, elements=st.floats(0.0, 1.0)),
        st.floats(0.01, 10.0),
    )
    def test_on_simplex(self, logits, u, tau):
        y = gumbel_softmax(CategoricalLogits(logits), tau, u).data
        assert np.all(y >= 0)
        np.testing.assert_allclose(y.sum(), 1.0, atol=1e-12)

    def test_nonpositive_tau(self):
        with pytest.raises(ValueError):
            gumbel_softmax(CategoricalLogits(np.zeros(3)), 0.0, np.full(3, 0.5))

    @pytest.mark.parametrize("tau", [0.1, 1.0, 5.0])
    def test_argmax_law_is_categorical(self, tau):
        logits = np.array([0.5, -1.0, 1.2, 0.0])
        pi = CategoricalLogits(logits)
        n = 10**5
        u = np.random.default_rng(42).random((n, 4))
        counts = np.bincount(np.argmax(gumbel_softmax(pi, tau, u).data, axis=1), minlength=4)
        expected = n * pi.probs.data
        assert stats.chisquare(counts, expected).pvalue > 0.01

    # P(max component > 0.999) at tau = 0.01 over 3 uniform categories, by
    # nested quadrature over the exponential-race form of the Gumbel maximum
    LOW_TAU_ONE_HOT_RATE = 0.9544603911272093

    def test_low_temperature_nearly_one_hot(self):
        n = 10**5
        u = np.random.default_rng(42).random((n, 3))
        y = gumbel_softmax(CategoricalLogits(np.zeros(3)), 0.01, u).data
        rate = np.mean(y.max(axis=1) > 0.999)
        p = self.LOW_TAU_ONE_HOT_RATE
        assert abs(rate - p) <= 3 * np.sqrt(p * (1 - p) / n)
        assert rate > 0.95

    def test_categorical_probs_sum(self):
        rng = np.random.default_rng(42)
        p = CategoricalLogits(rng.normal(size=7) * 10).probs.data
        np.testing.assert_allclose(p.sum(), 1.0, atol=1e-12)


class TestStraightThrough:
    def test_forward_one_hot(self):
        np.testing.assert_array_equal(straight_through(np.array([0.2, 0.7, 0.1])).data, [0, 1, 0])

    def test_ties_lowest_index(self):
        np.testing.assert_array_equal(straight_through(np.array([0.4, 0.4, 0.2])).data, [1, 0, 0])

    def test_backward_equals_soft_path(self):
        rng = np.random.default_rng(42)
        logits = rng.normal(size=4)
        w = rng.normal(size=4)
        u = rng.random(4)

        x_soft = Value(logits, requires_grad=True)
        nd.backward(nd.vsum(gumbel_softmax(CategoricalLogits(x_soft), 0.5, u) * w))
        x_hard = Value(logits, requires_grad=True)
        nd.backward(nd.vsum(straight_through(gumbel_softmax(CategoricalLogits(x_hard), 0.5, u)) * w))
        np.testing.assert_array_equal(x_hard.grad, x_soft.grad)

    def test_bernoulli_variant(self):
        alpha = Value(np.array(0.7), requires_grad=True)
        out = straight_through_bernoulli(alpha)
        assert out.item() == 1.0
        nd.backward(out * 3.0)
        assert alpha.grad == 3.0
        assert straight_through_bernoulli(np.array(0.3)).item() == 0.0

    def test_floor_constant(self):
        assert PROB_FLOOR == 1e-7
