from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats

from artifact.errors import ConfigError, DomainError
from artifact.model import (Erlang, Exponential, ExponentialClaims, ModelParams, PointMass,
                            State, TabulatedCdf, TabulatedIntensity, integrability_check,
                            claim_cdf, closed_integrability_bound, intensity, renewal_density,
                            sample_claim, sample_first_waiting, sigma_nt_atom, sigma_nt_density,
                            survival, survival_delayed, waiting_time_from_uniform)


# ------------------------------------------------------------------ params


def test_params_validation():
    with pytest.raises(ConfigError):
        ModelParams(1.0, 0.05, 0.04, 0.3, 0.1, 2.0, 1.0)  # mu <= r
    with pytest.raises(ConfigError):
        ModelParams(1.5, 0.03, 0.08, 0.3, 0.1, 1.0, 1.0)  # M < p
    with pytest.raises(ConfigError):
        ModelParams(1.5, 0.03, 0.08, 0.0, 0.1, 2.0, 1.0)
    with pytest.raises(ConfigError):
        ModelParams(1.5, 0.03, 0.08, 0.3, 0.1, 2.0, float("nan"))


def test_max_discounted_dividends(ref_params):
    assert ref_params.max_discounted_dividends() == pytest.approx(
        2.0 * (1 - math.exp(-0.05)) / 0.05, rel=1e-14)


def test_state_domains():
    assert State(0.5, 1.0, 0.5).in_physical(1.0)
    assert not State(0.5, 1.0, 0.6).in_physical(1.0)
    assert not State(0.5, -0.01, 0.2).in_physical(1.0)
    assert State(0.5, -0.01, 0.55).in_extended(1.0, 0.05)


# ------------------------------------------------------------------ intensity


def test_intensity_examples():
    assert intensity(Exponential(1.0), 0.7) == 1.0
    assert intensity(Erlang(2, 1.0), 1.0) == pytest.approx(0.5, rel=1e-14)
    assert intensity(TabulatedIntensity((0.0, 1.0), (1.0, 3.0)), 0.5) == pytest.approx(2.0)


@given(st.integers(1, 5), st.floats(0.2, 3.0), st.floats(0.0, 6.0))
def test_erlang_intensity_matches_density_over_survival(k, rate, w):
    dist = stats.gamma(a=k, scale=1.0 / rate)
    expected = dist.pdf(w) / dist.sf(w)
    assert intensity(Erlang(k, rate), w) == pytest.approx(expected, rel=1e-9, abs=1e-12)


def test_tabulated_domain_and_extension():
    law = TabulatedIntensity((0.0, 1.0, 2.0), (1.0, 3.0, 2.0))
    with pytest.raises(DomainError):
        intensity(law, 2.5)
    assert intensity(law, 2.5, extend=True) == pytest.approx(2.0)
    with pytest.raises(ConfigError):
        TabulatedIntensity((0.0, 1.0), (1.0, 0.0))
    with pytest.raises(ConfigError):
        TabulatedIntensity((0.1, 1.0), (1.0, 1.0))
    with pytest.raises(ConfigError):
        TabulatedIntensity((0.0, 0.0), (1.0, 1.0))


def test_tabulated_from_csv(tmp_path):
    p = tmp_path / "lam.csv"
    p.write_text("0,1\n1,3\n")
    law = TabulatedIntensity.from_csv(p)
    assert intensity(law, 0.25) == pytest.approx(1.5)


# ------------------------------------------------------------------ survival


@given(st.floats(0.1, 5.0), st.floats(0.0, 4.0), st.floats(0.0, 4.0))
def test_exponential_survival_memoryless(rate, w, t):
    assert survival_delayed(Exponential(rate), w, t) == pytest.approx(math.exp(-rate * t),
                                                                      rel=1e-13)


def test_survival_at_zero_time():
    for law in (Exponential(2.0), Erlang(3, 1.5), TabulatedIntensity((0.0, 1.0), (1.0, 2.0))):
        assert survival_delayed(law, 0.4, 0.0) == 1.0


def test_erlang_delayed_survival_example():
    law = Erlang(2, 1.0)
    expected = 1.5 * math.exp(-1.0)
    assert survival_delayed(law, 1.0, 1.0) == pytest.approx(expected, rel=1e-12)
    # second route: quadrature of the intensity
    hazard, _ = integrate.quad(lambda y: intensity(law, y), 1.0, 2.0, epsabs=1e-13)
    assert math.exp(-hazard) == pytest.approx(expected, rel=1e-10)


def test_tabulated_survival_matches_quadrature():
    law = TabulatedIntensity((0.0, 0.5, 2.0), (0.5, 2.0, 1.0))
    for w, t in ((0.0, 1.0), (0.3, 1.2), (1.0, 0.9)):
        hazard, _ = integrate.quad(lambda y: np.interp(y, law.nodes, law.values), w, w + t,
                                   points=[0.5], epsabs=1e-13)
        assert survival_delayed(law, w, t) == pytest.approx(math.exp(-hazard), rel=1e-12)


@given(st.floats(0.0, 2.0), st.floats(0.0, 1.5), st.floats(0.0, 1.5))
def test_delayed_survival_semigroup(w, t1, t2):
    for law in (Erlang(2, 1.3), TabulatedIntensity((0.0, 1.0, 5.0), (1.0, 2.0, 0.5))):
        lhs = survival_delayed(law, w, t1 + t2)
        rhs = survival_delayed(law, w, t1) * survival_delayed(law, w + t1, t2)
        assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-300)


def test_survival_rejects_negative_arguments():
    with pytest.raises(DomainError):
        survival_delayed(Exponential(1.0), -0.1, 1.0)
    with pytest.raises(DomainError):
        survival(Exponential(1.0), -1.0)


# ------------------------------------------------------------------ sampling


def test_exponential_inversion_example():
    assert waiting_time_from_uniform(Exponential(1.0), 0.3, math.exp(-2.0)) == pytest.approx(2.0)


@given(st.floats(0.0, 3.0), st.floats(1e-6, 1.0))
def test_inversion_roundtrip(w, u):
    for law in (Erlang(2, 1.0), Erlang(3, 2.0),
                TabulatedIntensity((0.0, 1.0, 2.0), (1.0, 3.0, 2.0))):
        t = float(waiting_time_from_uniform(law, w, u))
        surv = survival_delayed(law, w, t, extend=True)
        assert surv == pytest.approx(u, rel=1e-7, abs=1e-12)
        assert 0.0 < surv <= 1.0


def test_erlang_waiting_ks():
    law = Erlang(2, 1.0)
    rng = np.random.default_rng(11)
    draws = sample_first_waiting(law, np.full(100_000, 0.5), rng)
    # closed-form conditional cdf: 1 - (1 + w + t) e^{-t} / (1 + w)
    cdf = lambda t: 1.0 - (1.5 + t) * np.exp(-t) / 1.5  # noqa: E731
    stat = stats.kstest(draws, cdf).statistic
    assert stat < 0.01


def test_uniform_outside_unit_interval_rejected():
    with pytest.raises(DomainError):
        waiting_time_from_uniform(Exponential(1.0), 0.0, 0.0)


# ------------------------------------------------------------------ claims


def test_claim_examples():
    assert ExponentialClaims(1.0).from_uniform(math.exp(-3.0)) == pytest.approx(3.0)
    assert claim_cdf(ExponentialClaims(1.0), 0.0) == 0.0
    rng = np.random.default_rng(5)
    assert sample_claim(ExponentialClaims(2.0), rng, 1_000_000).mean() == pytest.approx(
        2.0, abs=0.01)


@given(st.floats(0.0, 4.0), st.floats(0.0, 4.0))
def test_claim_cdf_integral(a, b):
    a, b = min(a, b), max(a, b)
    for law in (ExponentialClaims(0.7), TabulatedCdf((0.0, 1.0, 3.0), (0.0, 0.6, 1.0))):
        kinks = [k for k in (1.0, 3.0) if a < k < b] or None
        ref, _ = integrate.quad(lambda u: float(law.cdf(u)), a, b, points=kinks, epsabs=1e-12)
        assert float(law.cdf_integral(a, b)) == pytest.approx(ref, abs=1e-9)


def test_tabulated_cdf_validation_and_sampling():
    with pytest.raises(ConfigError):
        TabulatedCdf((0.0, 1.0), (0.0, 0.9))
    with pytest.raises(ConfigError):
        TabulatedCdf((0.0, 1.0, 2.0), (0.0, 0.7, 0.5))
    law = TabulatedCdf((0.0, 2.0), (0.0, 1.0))  # uniform on [0, 2]
    assert float(law.from_uniform(0.25)) == pytest.approx(0.5)
    assert law.mean() == pytest.approx(1.0)


def test_point_mass():
    law = PointMass(0.0)
    assert float(law.cdf(0.0)) == 1.0
    assert float(law.cdf_integral(0.0, 0.3)) == pytest.approx(0.3)
    assert law.mean() == 0.0


# ------------------------------------------------------------------ last claim epoch


def test_sigma_density_exponential():
    law = Exponential(1.3)
    assert sigma_nt_density(law, 1.0, 0.4) == pytest.approx(1.3 * math.exp(-1.3 * 0.6))


def test_sigma_density_total_mass():
    law = Exponential(1.0)
    cont, _ = integrate.quad(lambda u: sigma_nt_density(law, 1.0, u), 0.0, 1.0, epsabs=1e-13)
    assert cont + sigma_nt_atom(law, 1.0) == pytest.approx(1.0, abs=1e-8)
    law = Erlang(2, 1.0)
    cont, _ = integrate.quad(lambda u: sigma_nt_density(law, 1.5, u), 0.0, 1.5, epsabs=1e-12)
    assert cont + sigma_nt_atom(law, 1.5) == pytest.approx(1.0, abs=1e-8)


def test_erlang_renewal_density_closed_form():
    # Erlang(2, lam): renewal density lam (1 - e^{-2 lam u}) / 2
    u = np.linspace(0.01, 3.0, 40)
    assert np.allclose(renewal_density(Erlang(2, 1.7), u), 1.7 * (1 - np.exp(-3.4 * u)) / 2,
                       rtol=1e-9, atol=1e-11)


def test_tabulated_renewal_density_matches_poisson_when_constant():
    law = TabulatedIntensity((0.0, 5.0), (1.4, 1.4))
    u = np.linspace(0.05, 1.5, 10)
    assert np.allclose(renewal_density(law, u, u_max=1.5), 1.4, rtol=2e-3)


@given(st.integers(1, 4), st.floats(0.3, 3.0), st.floats(0.1, 3.0), st.floats(0.01, 0.99))
def test_erlang_sigma_density_bound(k, lam, t, frac):
    law = Erlang(k, lam)
    u = frac * t
    assert sigma_nt_density(law, t, u) <= lam * survival(law, t - u) * (1 + 1e-9)


def test_sigma_density_domain():
    with pytest.raises(DomainError):
        sigma_nt_density(Exponential(1.0), 1.0, 0.0)
    with pytest.raises(DomainError):
        sigma_nt_density(Exponential(1.0), 1.0, 1.5)


# ------------------------------------------------------------------ integrability


def test_closed_bound():
    # 2 lam^g / (5 - g) T^((5 - g)/2)
    assert closed_integrability_bound(Exponential(1.0), 2.0, 1.0) == pytest.approx(2.0 / 3.0)
    assert closed_integrability_bound(Exponential(2.0), 3.0, 4.0) == pytest.approx(
        2 * 8 / 2 * 4 ** 1)


def test_integrability_exponential_value():
    res = integrability_check(Exponential(1.0), 2.0, 1.0)
    # independent route: inner integral in closed form, outer by substitution t = v^2
    inner = lambda t: (1 - math.exp(-2 * t)) / 2  # noqa: E731
    ref, _ = integrate.quad(lambda v: 2 * inner(v * v), 0.0, 1.0, epsabs=1e-14)
    assert res.value == pytest.approx(ref, rel=1e-8)
    assert res.value == pytest.approx(0.4018560, abs=1e-6)
    assert res.passed and res.value <= 2 / 3 + 1e-4


def test_integrability_erlang_value():
    res = integrability_check(Erlang(2, 1.0), 2.0, 1.0)

    def f(t, u):  # renewal density times survival of the remaining time
        return (1 - math.exp(-2 * u)) / 2 * (1 + t - u) * math.exp(-(t - u))

    ref, _ = integrate.dblquad(lambda u, v: 2 * f(v * v, u) ** 2, 0.0, 1.0, 0.0,
                               lambda v: v * v, epsabs=1e-12)
    assert res.value == pytest.approx(ref, rel=1e-6)
    assert res.value <= 2 / 3 + 1e-4 and res.passed


def test_integrability_edge_cases():
    assert integrability_check(Exponential(1.0), 2.0, 0.0).value == 0.0
    with pytest.raises(ConfigError):
        integrability_check(Exponential(1.0), 1.0, 1.0)
    with pytest.raises(ConfigError):
        integrability_check(Exponential(1.0), 5.0, 1.0)
