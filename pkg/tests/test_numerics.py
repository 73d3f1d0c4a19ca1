import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

import oracles
from smoothcert.numerics import (ConfidenceParams, RngStream, binom_two_sided_pvalue, clopper_pearson_lower,
                                 gaussian_sample, std_normal_cdf, std_normal_quantile)


class TestNormal:
    def test_cdf_examples(self):
        assert std_normal_cdf(0.0) == 0.5
        assert std_normal_cdf(1.959964) == pytest.approx(0.975, abs=1e-7)
        assert std_normal_cdf(1.959964) == pytest.approx(oracles.normal_cdf(1.959964)[0], abs=1e-15)

    @given(st.floats(-30, 30))
    def test_cdf_symmetry(self, z):
        assert std_normal_cdf(-z) + std_normal_cdf(z) == pytest.approx(1.0, abs=1e-15)

    def test_cdf_matches_quadrature_on_grid(self):
        z = np.linspace(-8, 8, 2001)
        ours = np.array([std_normal_cdf(v) for v in z])
        assert np.max(np.abs(ours - oracles.normal_cdf(z))) <= 1e-12
        # lower tail keeps relative precision as well
        tail = z < -3
        assert np.max(np.abs(ours[tail] / oracles.normal_cdf(z[tail]) - 1)) < 1e-12

    def test_quantile_examples(self):
        assert std_normal_quantile(0.5) == 0.0
        assert std_normal_quantile(0.975) == pytest.approx(1.959964, abs=1e-6)
        assert std_normal_quantile(std_normal_cdf(1.3)) == pytest.approx(1.3, abs=1e-10)

    @pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5, float("nan")])
    def test_quantile_domain(self, p):
        with pytest.raises(ValueError):
            std_normal_quantile(p)

    def test_quantile_extreme_tails(self):
        for p in (1e-300, 1e-100, 1e-20, 1e-12):
            z = std_normal_quantile(p)
            assert z == pytest.approx(stats.norm.ppf(p), rel=1e-12)
        # upper half is reflected through 1 - p, which is exact there
        for p in (0.75, 0.999, 1 - 1e-9):
            assert std_normal_quantile(p) == -std_normal_quantile(1 - p)

    @given(st.floats(1e-12, 1 - 1e-12))
    def test_quantile_round_trip(self, p):
        assert std_normal_cdf(std_normal_quantile(p)) == pytest.approx(p, abs=1e-10)

    @given(st.floats(-8, 8), st.floats(-8, 8))
    def test_monotone(self, a, b):
        lo, hi = min(a, b), max(a, b)
        assert std_normal_cdf(lo) <= std_normal_cdf(hi)
        plo, phi = std_normal_cdf(lo), std_normal_cdf(hi)
        if 0 < plo < phi < 1:
            assert std_normal_quantile(plo) < std_normal_quantile(phi)


class TestClopperPearson:
    def test_examples(self):
        assert clopper_pearson_lower(0, 100, 0.001) == 0.0
        assert clopper_pearson_lower(100, 100, 0.001) == pytest.approx(0.933254, abs=1e-6)
        assert clopper_pearson_lower(100, 100, 0.001) == 0.001 ** (1 / 100)
        ref = stats.beta.ppf(0.001, 9900, 101)
        assert clopper_pearson_lower(9900, 10000, 0.001) == pytest.approx(ref, abs=1e-9)

    def test_defining_tail_probability(self):
        # P[Binomial(n, p_low) >= k] = alpha, checked by direct summation
        for k, n, alpha in [(7, 10, 0.05), (60, 100, 0.001), (95, 100, 0.01)]:
            p = clopper_pearson_lower(k, n, alpha)
            assert oracles.binom_tail_ge(k, n, p) == pytest.approx(alpha, rel=1e-8)

    @pytest.mark.parametrize("k,n", [(-1, 10), (11, 10), (0, 0)])
    def test_bad_counts(self, k, n):
        with pytest.raises(ValueError):
            clopper_pearson_lower(k, n, 0.01)

    def test_bad_alpha(self):
        with pytest.raises(ValueError):
            clopper_pearson_lower(3, 10, 0.0)

    @given(st.integers(1, 2000).flatmap(lambda n: st.tuples(st.integers(0, n), st.just(n))),
           st.floats(1e-6, 0.5))
    def test_below_mle_and_monotone(self, kn, alpha):
        k, n = kn
        p = clopper_pearson_lower(k, n, alpha)
        assert 0.0 <= p <= k / n
        if k < n:
            assert clopper_pearson_lower(k + 1, n, alpha) >= p

    def test_coverage(self):
        rng = np.random.default_rng(7)
        alpha, n, p = 0.001, 100, 0.7
        table = np.array([clopper_pearson_lower(k, n, alpha) for k in range(n + 1)])
        ks = rng.binomial(n, p, size=10_000)
        assert np.mean(table[ks] > p) <= alpha + 3 * math.sqrt(alpha / 10_000)


class TestBinomialTest:
    def test_examples(self):
        assert binom_two_sided_pvalue(5, 10) == 1.0
        assert binom_two_sided_pvalue(10, 10) == pytest.approx(2 * 0.5 ** 10, rel=1e-12)
        assert binom_two_sided_pvalue(6, 10) == pytest.approx(oracles.binom_two_sided_enum(6, 10), rel=1e-12)

    @given(st.integers(1, 300).flatmap(lambda n: st.tuples(st.integers(0, n), st.just(n))))
    def test_matches_enumeration(self, kn):
        k, n = kn
        assert binom_two_sided_pvalue(k, n) == pytest.approx(oracles.binom_two_sided_enum(k, n), rel=1e-9)


class TestSampling:
    def test_zero_sigma(self):
        rng = RngStream(3, 1)
        assert np.array_equal(gaussian_sample(rng, 5, 0.0), np.zeros(5))
        assert rng.position == 10

    def test_determinism_and_independence(self):
        a = gaussian_sample(RngStream(1, 2), 100, 0.5)
        b = gaussian_sample(RngStream(1, 2), 100, 0.5)
        c = gaussian_sample(RngStream(1, 3), 100, 0.5)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)
        assert abs(np.corrcoef(gaussian_sample(RngStream(1, 2), 50_000, 1),
                               gaussian_sample(RngStream(1, 3), 50_000, 1))[0, 1]) < 4 / math.sqrt(50_000)

    def test_chunking_invariance(self):
        whole = gaussian_sample(RngStream(9), 1000, 1.0)
        rng = RngStream(9)
        parts = np.concatenate([gaussian_sample(rng, c, 1.0) for c in (1, 99, 400, 500)])
        assert np.array_equal(whole, parts)

    def test_child_streams_distinct(self):
        root = RngStream(5)
        seen = {root.child(i).stream_id for i in range(1000)}
        assert len(seen) == 1000
        assert root.child(1, 2).stream_id != root.child(2, 1).stream_id

    def test_moments(self):
        n, sigma = 10 ** 6, 1.0
        x = gaussian_sample(RngStream(2024), n, sigma)
        assert abs(x.mean()) <= 0.004
        # chi-square band: var of the sample variance is 2 sigma^4 / (n - 1)
        assert abs(x.var(ddof=1) - sigma ** 2) <= 4 * math.sqrt(2 / (n - 1))

    def test_distribution_shape(self):
        x = gaussian_sample(RngStream(11), 200_000, 0.25)
        assert stats.kstest(x / 0.25, "norm").pvalue > 1e-3

    def test_negative_sigma(self):
        with pytest.raises(ValueError):
            gaussian_sample(RngStream(0), 3, -1.0)


def test_confidence_params_validation():
    assert ConfidenceParams() == ConfidenceParams(0.001, 100, 10_000)
    for bad in (dict(alpha=0), dict(alpha=1), dict(n0=0), dict(n0=200, n=100)):
        with pytest.raises(ValueError):
            ConfidenceParams(**bad)
