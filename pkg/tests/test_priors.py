import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from qcd.errors import DegeneratePrior, InvalidModel
from qcd.priors import (
    Prior,
    changepoints_from_uniform,
    check_condition_c,
    log_survival,
    mean_changepoint,
    pmf,
    sample_changepoint,
    survival,
    tail_exponent,
)
from qcd.streams import Stream

geometric_priors = st.builds(
    Prior.geometric,
    rho=st.floats(0.01, 0.99),
    q=st.floats(0.0, 0.9),
)
polynomial_priors = st.builds(
    Prior.polynomial,
    s=st.floats(0.2, 3.0),
    K=st.integers(1, 500),
    q=st.floats(0.0, 0.9),
)
any_prior = st.one_of(geometric_priors, polynomial_priors)


class TestPmf:
    def test_geometric_values(self):
        assert pmf(Prior.geometric(0.5), 2) == pytest.approx(0.125, abs=1e-15)
        assert pmf(Prior.geometric(0.5, q=0.2), 0) == pytest.approx(0.4, abs=1e-15)

    def test_polynomial_outside_support(self):
        assert pmf(Prior.polynomial(1.0, K=10), 11) == 0.0

    def test_polynomial_shape(self):
        p = Prior.polynomial(1.0, K=10)
        k = np.arange(11)
        ratios = pmf(p, k) / (k + 1.0) ** -2.0
        np.testing.assert_allclose(ratios, ratios[0], rtol=1e-14)

    def test_negative_k_rejected(self):
        with pytest.raises(ValueError):
            pmf(Prior.geometric(0.5), -1)


class TestSurvival:
    def test_values(self):
        p = Prior.geometric(0.5)
        assert survival(p, 0) == 1.0
        assert survival(p, 2) == pytest.approx(0.25, abs=1e-15)

    def test_exhausted_polynomial_support(self):
        p = Prior.polynomial(1.0, K=10)
        assert survival(p, 11) == 0.0
        with pytest.raises(DegeneratePrior):
            log_survival(p, 11)
        assert math.isfinite(log_survival(p, 10))


@settings(max_examples=60, deadline=None)
@given(any_prior)
def test_normalization(prior):
    n = prior.K + 1 if prior.kind == "polynomial" else 4000
    total = prior.q + float(np.sum(pmf(prior, np.arange(n))))
    assert total == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(any_prior)
def test_survival_consistency(prior):
    n = np.arange(0, 200 if prior.kind == "geometric" else prior.K + 1)
    diff = survival(prior, n) - survival(prior, n + 1)
    np.testing.assert_allclose(diff, pmf(prior, n), rtol=0, atol=1e-12)
    assert np.all(np.diff(survival(prior, n)) <= 0)
    assert survival(prior, 0) == pytest.approx(1 - prior.q, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.01, 0.99), st.integers(0, 60), st.integers(0, 60))
def test_geometric_memoryless(rho, n, m):
    p = Prior.geometric(rho)
    assert survival(p, n + m) == pytest.approx(survival(p, n) * survival(p, m), abs=1e-12)


class TestTailExponent:
    @pytest.mark.parametrize("rho, expected", [(0.1, 0.105360516), (0.5, 0.693147181)])
    def test_geometric(self, rho, expected):
        assert tail_exponent(Prior.geometric(rho)) == pytest.approx(expected, abs=1e-9)

    def test_polynomial(self):
        assert tail_exponent(Prior.polynomial(2.0)) == 0.0

    @pytest.mark.parametrize("rho", [0.05, 0.1, 0.3])
    def test_empirical_limit(self, rho):
        p = Prior.geometric(rho)
        n = 200
        # 1 - Pi_n = P(nu > n) = (1 - rho)^(n + 1), so the ratio over n carries an O(1/n) offset
        log_tail = abs(math.log(survival(p, n + 1)))
        assert log_tail / (n + 1) == pytest.approx(tail_exponent(p), abs=1e-12)
        assert log_tail / n - tail_exponent(p) == pytest.approx(tail_exponent(p) / n, abs=1e-12)


class TestConditionC:
    def test_geometric_automatic(self):
        rep = check_condition_c(Prior.geometric(0.1), r=2)
        assert rep.satisfied
        assert rep.mu == pytest.approx(0.10536, abs=1e-5)
        assert rep.log_moment_sum is None

    def test_polynomial_sums_brute_force(self):
        p = Prior.polynomial(1.0, K=10_000)
        w = np.array([(k + 1.0) ** -2 for k in range(10_001)])
        pik = w / w.sum()
        expected_r1 = sum(x * abs(math.log(x)) for x in pik)
        expected_r3 = sum(x * abs(math.log(x)) ** 3 for x in pik)
        r1 = check_condition_c(p, r=1)
        r3 = check_condition_c(p, r=3)
        assert r1.satisfied and r3.satisfied
        assert r1.mu == 0.0
        assert r1.log_moment_sum == pytest.approx(expected_r1, rel=1e-10)
        assert r3.log_moment_sum == pytest.approx(expected_r3, rel=1e-10)
        assert r3.log_moment_sum > r1.log_moment_sum

    def test_rejects_r_below_one(self):
        with pytest.raises(ValueError):
            check_condition_c(Prior.geometric(0.1), r=0.5)


class TestMean:
    @pytest.mark.parametrize("rho, expected", [(0.2, 4.0), (0.5, 1.0)])
    def test_geometric(self, rho, expected):
        assert mean_changepoint(Prior.geometric(rho)) == pytest.approx(expected, rel=1e-14)

    def test_geometric_matches_summation(self):
        p = Prior.geometric(0.3, q=0.25)
        j = np.arange(3000)
        assert mean_changepoint(p) == pytest.approx(float(np.sum(j * pmf(p, j))), rel=1e-12)

    def test_polynomial_brute_force(self):
        p = Prior.polynomial(1.0, K=100)
        w = [(k + 1.0) ** -2 for k in range(101)]
        expected = sum(j * wj for j, wj in enumerate(w)) / sum(w)
        assert mean_changepoint(p) == pytest.approx(expected, rel=1e-12)


class TestSampling:
    def test_atom_frequency(self):
        q = 1 - 1e-3
        p = Prior.geometric(0.5, q=q)
        draws = sample_changepoint(p, np.random.default_rng(1), size=100_000)
        freq = np.mean(draws == -1)
        band = 3 * math.sqrt(q * (1 - q) / 100_000)
        assert abs(freq - q) <= band

    def test_geometric_goodness_of_fit(self):
        p = Prior.geometric(0.5)
        draws = sample_changepoint(p, np.random.default_rng(2), size=100_000)
        edges = 12
        observed = np.bincount(np.minimum(draws, edges), minlength=edges + 1)
        probs = np.append(pmf(p, np.arange(edges)), survival(p, edges))
        expected = probs * len(draws)
        # per-bin 3 sigma
        sd = np.sqrt(len(draws) * probs * (1 - probs))
        assert np.all(np.abs(observed - expected) <= 3 * sd + 1)
        _, pval = stats.chisquare(observed, expected)
        assert pval > 0.001

    def test_polynomial_goodness_of_fit_and_support(self):
        p = Prior.polynomial(1.0, K=10)
        u = np.random.default_rng(3).random(100_000)
        draws = changepoints_from_uniform(p, u)
        assert draws.min() >= 0 and draws.max() <= 10
        observed = np.bincount(draws, minlength=11)
        _, pval = stats.chisquare(observed, pmf(p, np.arange(11)) * len(draws))
        assert pval > 0.001

    def test_stream_draw_is_deterministic(self):
        p = Prior.geometric(0.1)
        s = Stream.from_seed(42, trial=7)
        assert sample_changepoint(p, s) == sample_changepoint(p, Stream.from_seed(42, trial=7))
        assert isinstance(sample_changepoint(p, s), int)


class TestConstruction:
    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(kind="geometric", rho=0.0),
            dict(kind="geometric", rho=1.0),
            dict(kind="geometric", rho=0.5, q=1.0),
            dict(kind="polynomial", s=0.0),
            dict(kind="polynomial", s=1.0, K=0),
            dict(kind="weibull"),
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(InvalidModel):
            Prior(**kwargs)
