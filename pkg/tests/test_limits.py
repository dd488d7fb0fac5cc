import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from dilute_cw.limits import (
    LimitLaw,
    clt_covariance,
    clt_limit,
    gaussian_cdf_1d,
    gaussian_rect_prob_2d,
    lln_limit,
    m_beta,
)


def test_m_beta_high_temperature():
    assert m_beta(0.5) == 0.0
    assert m_beta(1.0) == 0.0


def test_m_beta_two():
    x = m_beta(2.0)
    assert 0.95 < x < 0.96
    assert abs(x - math.tanh(2 * x)) <= 1e-12


@settings(max_examples=1000, deadline=None)
@given(st.floats(1.0 + 1e-6, 5.0))
def test_m_beta_residual(beta):
    x = m_beta(beta)
    assert x > 0
    assert abs(x - math.tanh(beta * x)) <= 1e-12


def test_m_beta_continuous_at_one():
    vals = [m_beta(1 + 10.0**-k) for k in range(1, 7)]
    assert all(b < a for a, b in zip(vals, vals[1:]))
    assert vals[-1] < 0.01
    # near beta = 1 the root behaves like sqrt(3 (beta - 1))
    assert vals[-1] == pytest.approx(math.sqrt(3e-6), rel=1e-3)


def test_m_beta_rejects_nonpositive():
    with pytest.raises(ValueError):
        m_beta(0.0)


def test_lln_limit():
    law = lln_limit(0.5)
    assert law.atoms.tolist() == [[0.0, 0.0]]
    law = lln_limit(2.0)
    m = m_beta(2.0)
    np.testing.assert_allclose(law.weights, [0.5, 0.5])
    np.testing.assert_allclose(law.atoms[0], -law.atoms[1])
    np.testing.assert_allclose(law.atoms[1], [m, m])


def test_clt_covariance_examples():
    np.testing.assert_allclose(clt_covariance(0.3, 0.4, 0.0), np.eye(2))
    np.testing.assert_allclose(clt_covariance(0.5, 0.5, 0.5), [[1.5, 0.5], [0.5, 1.5]], atol=1e-15)
    np.testing.assert_allclose(clt_covariance(1.0, 0.0, 0.5), np.diag([2.0, 1.0]))
    with pytest.raises(ValueError):
        clt_covariance(0.5, 0.5, 1.0)
    with pytest.raises(ValueError):
        clt_covariance(0.7, 0.5, 0.5)


@settings(max_examples=1000, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 0.999))
def test_clt_covariance_positive_definite(a1, a2, beta):
    if a1 + a2 > 1:
        a1, a2 = a1 / 2, a2 / 2
    c = clt_covariance(a1, a2, beta)
    assert np.linalg.eigvalsh(c).min() > 0
    swapped = clt_covariance(a2, a1, beta)
    assert np.array_equal(swapped, c[::-1, ::-1].T)


def test_gaussian_cdf_1d():
    assert gaussian_cdf_1d(0.0) == 0.5
    xs = np.linspace(-8, 8, 33)
    np.testing.assert_allclose(gaussian_cdf_1d(xs, 1.0, 4.0), stats.norm.cdf(xs, 1.0, 2.0), atol=1e-15)
    with pytest.raises(ValueError):
        gaussian_cdf_1d(0.0, 0.0, 0.0)


def test_rect_prob_normalization_and_orthant():
    cov = clt_covariance(0.5, 0.5, 0.5)
    total = gaussian_rect_prob_2d(((-np.inf, np.inf), (-np.inf, np.inf)), np.zeros(2), cov)
    assert abs(total - 1) < 1e-7
    rho = 0.5 / 1.5
    val, err = gaussian_rect_prob_2d(((-np.inf, 0), (-np.inf, 0)), np.zeros(2), cov, return_error=True)
    assert abs(val - (0.25 + math.asin(rho) / (2 * math.pi))) < 1e-7
    assert err < 1e-7


def test_rect_prob_against_scipy():
    cov = np.array([[2.0, -0.7], [-0.7, 1.0]])
    mean = np.array([0.3, -0.2])
    rect = ((-1.0, 0.5), (-0.4, 2.0))
    mvn = stats.multivariate_normal(mean, cov)
    ref = (mvn.cdf([0.5, 2.0]) - mvn.cdf([-1.0, 2.0]) - mvn.cdf([0.5, -0.4]) + mvn.cdf([-1.0, -0.4]))
    assert gaussian_rect_prob_2d(rect, mean, cov) == pytest.approx(ref, abs=1e-6)


def test_rect_prob_degenerate():
    with pytest.raises(ValueError):
        gaussian_rect_prob_2d(((0, 1), (0, 1)), np.zeros(2), np.ones((2, 2)))
    with pytest.raises(ValueError):
        gaussian_rect_prob_2d(((0, 1), (0, 1)), np.zeros(2), np.diag([1.0, 0.0]))


def test_limit_law_validation():
    with pytest.raises(ValueError):
        LimitLaw.mixture([0.5, 0.6], [[0, 0], [1, 1]])
    with pytest.raises(ValueError):
        LimitLaw.gaussian(np.zeros(2), [[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(ValueError):
        LimitLaw("other")


def test_gaussian_expectation_quadrature():
    law = clt_limit(0.5, 0.5, 0.5)
    # E cos(y1 + y2) = exp(-Var(y1 + y2) / 2) with Var = 1.5 + 1.5 + 2 * 0.5 = 4
    val = law.expectation(lambda y: np.cos(y[:, 0] + y[:, 1]))
    assert val == pytest.approx(math.exp(-2.0), abs=1e-10)
    rng = np.random.default_rng(0)
    draws = law.sample(200_000, rng)
    np.testing.assert_allclose(np.cov(draws.T), law.cov, atol=0.03)
