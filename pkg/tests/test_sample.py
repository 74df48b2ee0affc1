import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from identikit.sample import (DegenerateDensityError, GaussianPosterior, PosteriorSupportError,
                              density, draw, draw_posterior, gaussian, halton_unit, lognormal,
                              moments, quantile_band, radical_inverse, truncated_gaussian,
                              uniform)


def test_halton_first_point_after_skip():
    assert halton_unit(1, 1)[0, 0] == pytest.approx(0.65625)
    # 21 = 10101 (base 2) and 210 (base 3); digits mirrored about the radix point
    assert radical_inverse(21, 2) == pytest.approx(0.65625)
    assert radical_inverse(21, 3) == pytest.approx(0 / 3 + 1 / 9 + 2 / 27)


def test_lhs_one_point_per_stratum():
    s = draw([uniform(0, 1), uniform(0, 1)], 50, "lhs", seed=3)
    for j in range(2):
        strata = np.floor(s.points[:, j] * 50).astype(int)
        assert sorted(strata) == list(range(50))


def test_draw_deterministic_and_weights():
    a = draw([uniform(0.25, 0.35), gaussian(0, 1)], 100, "monte_carlo", seed=9)
    b = draw([uniform(0.25, 0.35), gaussian(0, 1)], 100, "monte_carlo", seed=9)
    assert np.array_equal(a.points, b.points)
    assert np.allclose(a.weights, 0.01)


def test_inverse_cdf_schemes_follow_the_prior():
    s = draw([lognormal(0.0, 0.5)], 4000, "halton")
    assert stats.kstest(s.points[:, 0], stats.lognorm(s=0.5).cdf).statistic < 0.01


def test_truncated_gaussian_stays_in_box():
    d = truncated_gaussian(0.0, 1.0, -0.5, 2.0)
    x = d.sample(np.random.default_rng(0), 5000)
    assert x.min() >= -0.5 and x.max() <= 2.0
    assert x.mean() == pytest.approx(d.mean(), abs=0.03)


def test_truncated_gaussian_tiny_acceptance_errors():
    d = truncated_gaussian(0.0, 1.0, 8.0, 9.0)
    with pytest.raises(ValueError):
        d.sample(np.random.default_rng(0), 10)


def test_distribution_validation():
    with pytest.raises(ValueError):
        uniform(1, 0)
    with pytest.raises(ValueError):
        gaussian(0, -1)


def test_moments_equal_weights_unbiased():
    x = np.array([1.0, 2.0, 3.0, 4.0])
    m, v = moments(x)
    assert m == pytest.approx(2.5)
    assert v == pytest.approx(np.var(x, ddof=1))


def test_posterior_sampling_recovers_moments():
    cov = np.array([[0.8e-4, 0.1e-4], [0.1e-4, 0.26e-4]])
    post = GaussianPosterior([0.29, 0.09], cov)
    s = draw_posterior(post, 50_000, seed=1)
    m, _ = moments(s.points)
    emp = np.cov(s.points.T)
    assert np.allclose(m, [0.29, 0.09], atol=3 * np.sqrt(np.diag(cov) / 50_000))
    assert np.all(np.abs(emp - cov) <= 0.05 * np.sqrt(np.outer(np.diag(cov), np.diag(cov))))


def test_posterior_bounds_and_support_error():
    post = GaussianPosterior([0.0], [[1.0]], bounds=[[0.0, 1.0]])
    s = draw_posterior(post, 200, seed=0)
    assert s.points.min() >= 0.0 and s.points.max() <= 1.0
    far = GaussianPosterior([0.0], [[1e-4]], bounds=[[5.0, 6.0]])
    with pytest.raises(PosteriorSupportError):
        draw_posterior(far, 10, seed=0)


def test_posterior_rejects_non_psd():
    with pytest.raises(ValueError):
        GaussianPosterior([0, 0], [[1.0, 2.0], [2.0, 1.0]])


@pytest.mark.parametrize("method", ["kde", "histogram"])
def test_density_normalized(method):
    x = np.random.default_rng(0).normal(size=2000)
    c = density(x, method)
    assert np.trapezoid(c.pdf, c.x) == pytest.approx(1.0, abs=1e-6)


def test_density_degenerate():
    with pytest.raises(DegenerateDensityError):
        density(np.ones(10))


def test_quantile_band():
    v = np.tile(np.arange(100.0)[:, None], (1, 3))
    band = quantile_band(v, (0.05, 0.95))
    assert band.shape == (2, 3)
    assert band[0, 0] == pytest.approx(np.quantile(np.arange(100.0), 0.05))
    with pytest.raises(ValueError):
        quantile_band(v[:10], (0.05, 0.95))


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3), st.sampled_from(["monte_carlo", "lhs", "halton"]))
def test_draw_within_uniform_support(k, scheme):
    pri = [uniform(0.25, 0.35), uniform(0.06, 0.18), uniform(1, 6)][:k]
    s = draw(pri, 64, scheme, seed=k)
    for j, d in enumerate(pri):
        lo, hi = d.support
        assert np.all((s.points[:, j] >= lo) & (s.points[:, j] <= hi))
