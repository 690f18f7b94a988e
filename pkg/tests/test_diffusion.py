from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats
from scipy.integrate import quad

from coalbg import diffusion
from coalbg.core import ModelParams, SelectionProfile, replicate_stream


def _prm(mu1=0.025, mu2=0.025, s0=0.16, kind="balancing"):
    sel = SelectionProfile.balancing(s0, 0.5) if kind == "balancing" else SelectionProfile.directional(s0)
    return ModelParams(mu1=mu1, mu2=mu2, nu=0.1, selection=sel)


def test_coefficients():
    c = diffusion.coefficients(np.array([0.25]), _prm(mu1=0.1, mu2=0.3, s0=0.0))
    assert c.drift[0] == pytest.approx(0.5 * (-0.1 * 0.25 + 0.3 * 0.75))
    assert c.variance[0] == pytest.approx(0.5 * 0.25 * 0.75)


@pytest.mark.parametrize("mu1,mu2", [(0.025, 0.025), (0.3, 0.8), (1.5, 0.2)])
def test_neutral_density_is_beta(mu1, mu2):
    dens = diffusion.stationary_density(_prm(mu1, mu2, s0=0.0))
    x = np.linspace(0.05, 0.95, 7)
    np.testing.assert_allclose(dens(x), stats.beta.pdf(x, 2 * mu2, 2 * mu1), rtol=1e-10)
    assert dens.expectation(np.ones_like) == pytest.approx(1.0, abs=1e-12)
    assert dens.mean() == pytest.approx(mu2 / (mu1 + mu2), rel=1e-10)


@given(s0=st.floats(-5, 5), mu=st.floats(0.01, 2.0), kind=st.sampled_from(["balancing", "directional"]))
def test_density_normalised_against_quadrature(s0, mu, kind):
    dens = diffusion.stationary_density(_prm(mu, 1.3 * mu, s0, kind))
    total = quad(lambda p: dens(p), 0, 0.5, limit=200)[0] + quad(lambda p: dens(p), 0.5, 1, limit=200)[0]
    assert total == pytest.approx(1.0, rel=1e-5)


def test_balancing_density_symmetric():
    dens = diffusion.stationary_density(_prm(s0=4.0))
    assert dens.mean() == pytest.approx(0.5, abs=1e-12)
    x = np.linspace(0.01, 0.49, 9)
    np.testing.assert_allclose(dens(x), dens(1 - x), rtol=1e-12)


def test_cdf_and_ppf_are_inverse():
    dens = diffusion.stationary_density(_prm(0.3, 0.2, s0=2.0))
    v = np.linspace(0.01, 0.99, 21)
    np.testing.assert_allclose(dens.cdf(dens.ppf(v)), v, atol=1e-9)
    x = 0.3
    ref = quad(lambda p: dens(p), 0, x, limit=200)[0]
    assert float(dens.cdf(x)) == pytest.approx(ref, abs=1e-6)


def test_sampling_matches_density():
    dens = diffusion.stationary_density(_prm(0.3, 0.2, s0=2.0))
    draws = diffusion.sample_stationary(dens, replicate_stream(1, 0), size=20_000)
    assert stats.kstest(draws, lambda x: dens.cdf(x)).pvalue > 1e-3


def test_sampling_puts_unrepresentable_mass_next_to_one():
    # with 2 mu << 1 a visible share of the law lies within machine epsilon of 1
    dens = diffusion.stationary_density(_prm(s0=2.0))
    draws = diffusion.sample_stationary(dens, replicate_stream(1, 2), size=20_000)
    top = 1.0 - np.finfo(float).epsneg
    share = 1.0 - float(dens.cdf(top))
    assert share > 0.01
    assert np.all(draws <= top)
    assert np.mean(draws == top) == pytest.approx(share, abs=4 * np.sqrt(share / 20_000))
    body = draws[(draws > 1e-3) & (draws < 1 - 1e-3)]
    lo, hi = dens.cdf(1e-3), dens.cdf(1 - 1e-3)
    assert stats.kstest(body, lambda x: (dens.cdf(x) - lo) / (hi - lo)).pvalue > 1e-3
    sub = diffusion.sample_stationary(dens, replicate_stream(1, 1), size=1000, p_range=(0.5, 0.52))
    assert np.all((sub >= 0.5) & (sub < 0.52))
    dens = diffusion.stationary_density(_prm(s0=2.0))
    sub = diffusion.sample_stationary(dens, replicate_stream(1, 1), size=1000, p_range=(0.5, 0.52))
    assert np.all((sub >= 0.5) & (sub < 0.52))


def test_hitting_probability():
    ss = diffusion.scale_speed(_prm(mu1=0.7, mu2=0.7, s0=1.0))
    assert diffusion.hitting_probability(0.2, 0.5, 0.8, ss) == pytest.approx(0.5, abs=1e-10)
    hs = [diffusion.hitting_probability(0.1, x, 0.9, ss) for x in (0.2, 0.4, 0.6, 0.8)]
    assert all(0 < h < 1 for h in hs) and np.all(np.diff(hs) < 0)
    # with 2 mu >= 1 the endpoint is never reached
    assert diffusion.hitting_probability(0.0, 0.5, 0.9, ss) == 0.0


def test_neutral_hitting_probability_closed_form():
    # scale density x^-2mu2 (1-x)^-2mu1 with mu = 1/4 integrates to an arcsine law
    ss = diffusion.scale_speed(_prm(mu1=0.25, mu2=0.25, s0=0.0))
    a, x, b = 0.1, 0.3, 0.7
    S = lambda y: np.arcsin(2 * y - 1)
    assert diffusion.hitting_probability(a, x, b, ss) == pytest.approx((S(b) - S(x)) / (S(b) - S(a)), rel=1e-8)


@pytest.mark.parametrize("mu,accessible", [(0.1, True), (0.4, True), (0.6, False), (1.5, False)])
def test_boundary_classification(mu, accessible):
    for e in (0, 1):
        cl = diffusion.classify_boundary(e, _prm(mu, mu, s0=0.5))
        assert cl.accessible is accessible
        assert cl.diagnostic_accessible is accessible
        assert cl.label == ("accessible" if accessible else "inaccessible")


def test_split_path_preserves_stationary_heterozygosity():
    prm = _prm()
    dens = diffusion.stationary_density(prm)
    target = dens.expectation(lambda p: p * (1 - p))
    path = diffusion.simulate_path(prm, 0.5, 0.01, 3000.0, replicate_stream(4, 0), record_every=10, scheme="split")
    assert np.all((path.values >= 0) & (path.values <= 1))
    assert np.mean(path.values * (1 - path.values)) == pytest.approx(target, abs=0.004)


def test_drift_flow_without_noise_approaches_equilibrium():
    path = diffusion.simulate_path(_prm(mu1=0.5, mu2=0.5, s0=2.0), 0.1, 0.01, 50.0, replicate_stream(0, 0), noise=False)
    assert path.values[-1] == pytest.approx(0.5, abs=1e-3)


def test_path_argument_validation():
    with pytest.raises(ValueError):
        diffusion.simulate_path(_prm(), 0.5, 0.0, 1.0, replicate_stream(0, 0))
    with pytest.raises(ValueError):
        diffusion.simulate_path(_prm(), 0.5, 0.1, 1.0, replicate_stream(0, 0), scheme="rk4")


def test_coefficients_at_endpoints():
    prm = _prm(mu1=0.3, mu2=0.2, s0=1.0, kind="directional")
    c0, c1 = diffusion.coefficients(0.0, prm), diffusion.coefficients(1.0, prm)
    assert (c0.variance, c0.drift) == pytest.approx((0.0, 0.1))
    assert (c1.variance, c1.drift) == pytest.approx((0.0, -0.15))
    assert diffusion.coefficients(0.5, _prm(0.2, 0.2, 0.0)).drift == 0.0


def test_scale_function_shapes():
    lin = diffusion.scale_speed(ModelParams(mu1=0.0, mu2=0.0))
    for x in (0.1, 0.3, 0.9):
        assert lin.scale(x) - lin.scale(0.5) == pytest.approx(x - 0.5, abs=1e-12)
    ss = diffusion.scale_speed(_prm(0.25, 0.25, s0=0.0))
    assert np.all(np.diff(ss.scale_values) > 0)
    x = np.array([1e-6, 1e-8])
    ratio = (ss.scale(x[0]) - ss.scale(0.0)) / (ss.scale(x[1]) - ss.scale(0.0))
    assert ratio == pytest.approx(10.0, rel=1e-3)  # n(x) ~ x^(1/2)


def test_hitting_probability_linear_scale_and_limits():
    lin = diffusion.scale_speed(ModelParams(mu1=0.0, mu2=0.0))
    assert diffusion.hitting_probability(0.2, 0.3, 0.6, lin) == pytest.approx(0.75)
    assert diffusion.hitting_probability(0.2, 0.2, 0.6, lin) == 1.0
    assert diffusion.hitting_probability(0.2, 0.2 + 1e-9, 0.6, lin) == pytest.approx(1.0, abs=1e-8)


@pytest.mark.parametrize("endpoint,mu1,mu2,accessible", [(0, 0.3, 0.5, False), (0, 0.3, 0.25, True), (1, 0.75, 0.3, False)])
def test_classification_examples(endpoint, mu1, mu2, accessible):
    assert diffusion.classify_boundary(endpoint, _prm(mu1, mu2, s0=0.0)).accessible is accessible


def test_beta_moments_and_uniform_case():
    dens = diffusion.stationary_density(_prm(0.3, 0.7, s0=0.0))
    x = diffusion.sample_stationary(dens, replicate_stream(2, 0), size=40_000)
    a, b = 1.4, 0.6
    assert x.mean() == pytest.approx(a / (a + b), abs=4 * np.sqrt(stats.beta.var(a, b) / len(x)))
    assert x.var() == pytest.approx(stats.beta.var(a, b), rel=0.03)
    uni = diffusion.stationary_density(_prm(0.5, 0.5, s0=0.0))
    u = diffusion.sample_stationary(uni, replicate_stream(2, 1), size=5000)
    assert stats.kstest(u, "uniform").pvalue > 0.01
    sym = diffusion.stationary_density(_prm(0.3, 0.3, s0=3.0))
    y = diffusion.sample_stationary(sym, replicate_stream(2, 2), size=20_000)
    assert y.mean() == pytest.approx(0.5, abs=4 * y.std() / np.sqrt(len(y)))


def test_long_run_occupation_matches_density():
    prm = _prm(0.3, 0.3, s0=0.0)
    dens = diffusion.stationary_density(prm)
    path = diffusion.simulate_path(prm, 0.5, 1e-3, 1e4, replicate_stream(6, 0), record_every=10_000, scheme="split")
    x = path.values[1:]
    edges = np.linspace(0, 1, 21)
    observed = np.histogram(x, edges)[0]
    expected = np.diff(dens.cdf(edges)) * len(x)
    assert stats.chisquare(observed, expected).pvalue > 0.01
