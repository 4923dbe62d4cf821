import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from wgcm.errors import InvalidCorrelation, NonFinite
from wgcm.gaussmax import (
    bonferroni_p,
    build_sampler,
    gaussian_max_p,
    gaussian_max_quantile,
    normal_two_sided_p,
)
from wgcm.statistic import CorrelationMatrix, ResidualProducts, correlation_matrix

Z975 = stats.norm.ppf(0.975)


def _oracle_two_sided(t):
    return 2 * stats.norm.sf(abs(t))


def test_normal_two_sided_p():
    assert normal_two_sided_p(0.0) == 1.0
    assert normal_two_sided_p(1.959964) == pytest.approx(0.05, abs=1e-6)
    assert normal_two_sided_p(-2.575829) == pytest.approx(0.01, abs=1e-6)
    for t in np.linspace(-9, 9, 37):
        assert normal_two_sided_p(t) == pytest.approx(_oracle_two_sided(t), abs=1e-12)
    with pytest.raises(NonFinite):
        normal_two_sided_p(math.inf)


def test_bonferroni_p():
    assert bonferroni_p(1.959964, 8) == pytest.approx(0.4, abs=1e-5)
    assert bonferroni_p(2.2, 1) == normal_two_sided_p(2.2)
    assert bonferroni_p(0.0, 5) == 1.0


def test_identity_sampler_and_jitter():
    sampler = build_sampler(CorrelationMatrix(np.eye(3)), 100, seed=1)
    np.testing.assert_array_equal(sampler.cholesky_factor, np.eye(3))
    assert sampler.jitter_used == 0.0
    ones = np.ones((2, 2))
    sampler = build_sampler(CorrelationMatrix(ones), 100, seed=1)
    assert 0.0 < sampler.jitter_used <= 1e-6
    L = sampler.cholesky_factor
    np.testing.assert_allclose(L @ L.T, ones + sampler.jitter_used * np.eye(2), atol=1e-8, rtol=0)


def test_asymmetric_matrix_rejected_upstream():
    with pytest.raises(InvalidCorrelation):
        CorrelationMatrix(np.array([[1.0, 0.3], [0.2, 1.0]]))


def test_one_dimensional_reduces_to_normal():
    sampler = build_sampler(CorrelationMatrix(np.eye(1)), 100_000, seed=2)
    p, se = gaussian_max_p(sampler, 1.959964)
    assert abs(p - 0.05) <= 3 * se


def test_two_independent_components_closed_form():
    sampler = build_sampler(CorrelationMatrix(np.eye(2)), 100_000, seed=3)
    s = 1.959964
    expected = 1 - (2 * stats.norm.cdf(s) - 1) ** 2
    assert expected == pytest.approx(0.0975, abs=1e-4)
    p, se = gaussian_max_p(sampler, s)
    assert abs(p - expected) <= 3 * se


def test_comonotone_pair_matches_single_coordinate():
    sampler = build_sampler(CorrelationMatrix(np.ones((2, 2))), 100_000, seed=4)
    s = 1.959964
    p, se = gaussian_max_p(sampler, s)
    assert abs(p - normal_two_sided_p(s)) <= 3 * se + 1e-3


def test_quantile_rank_rule_and_duality():
    sampler = build_sampler(CorrelationMatrix(np.eye(3)), 10_000, seed=5)
    assert gaussian_max_quantile(sampler, 0.99995) == sampler.sample.max()
    # ceil(0.9999 * 10000) = 9999: the second-largest draw
    assert gaussian_max_quantile(sampler, 0.9999) == sampler.sample[-2]
    for alpha in (0.01, 0.05, 0.2):
        q = gaussian_max_quantile(sampler, 1 - alpha)
        p, se = gaussian_max_p(sampler, q)
        assert abs(p - alpha) <= 2 / sampler.draws + 3 * se


def test_quantile_matches_normal_quantile():
    sampler = build_sampler(CorrelationMatrix(np.eye(1)), 100_000, seed=6)
    assert gaussian_max_quantile(sampler, 0.95) == pytest.approx(Z975, abs=0.02)


def test_determinism_and_thread_invariance():
    rng = np.random.default_rng(0)
    R = rng.standard_normal((100, 5)) @ rng.standard_normal((5, 5))
    sigma = correlation_matrix([ResidualProducts(R[:, k]) for k in range(5)])
    a = build_sampler(sigma, 9000, seed=7, threads=1)
    b = build_sampler(sigma, 9000, seed=7, threads=4)
    assert np.array_equal(a.sample, b.sample)
    assert gaussian_max_p(a, 1.5) == gaussian_max_p(b, 1.5)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10**6), k=st.integers(1, 12), s=st.floats(0.0, 5.0))
def test_dominance_and_monotonicity(seed, k, s):
    rng = np.random.default_rng(seed)
    R = rng.standard_normal((60, k)) + rng.standard_normal((60, 1))
    sigma = correlation_matrix([ResidualProducts(R[:, j]) for j in range(k)])
    sampler = build_sampler(sigma, 2000, seed=seed)
    p, se = gaussian_max_p(sampler, s)
    assert 0.0 < p <= 1.0
    # the add-one estimator can sit up to 1/(B+1) above the true tail probability
    assert p <= bonferroni_p(s, k) + 3 * se + 1 / (sampler.draws + 1)
    assert gaussian_max_p(sampler, s + 0.1)[0] <= p
    assert gaussian_max_quantile(sampler, 0.3) <= gaussian_max_quantile(sampler, 0.7)
