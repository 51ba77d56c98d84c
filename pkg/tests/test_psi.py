from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from artifact.errors import ConfigError
from artifact.model import Erlang, Exponential, ExponentialClaims, ModelParams
from artifact.psi import (PsiSpec, ZeroPsi, _fd_derivatives, build_psi, smoothstep5,
                          validate_psi)

P = ModelParams(p=1.5, r=0.03, mu=0.08, sigma=0.3, c=0.05, M=2.0, T=1.0)
DELTA = EPS = 0.05


@pytest.fixture(scope="module")
def psi():
    return build_psi(PsiSpec(), P, DELTA, EPS, 1.0)


def test_spec_validation():
    with pytest.raises(ConfigError):
        PsiSpec(slope_b=1.0)
    with pytest.raises(ConfigError):
        PsiSpec(k1=0.0)
    with pytest.raises(ConfigError):
        PsiSpec(collar_ramp=0.6)
    with pytest.raises(ConfigError):
        build_psi(PsiSpec(k2=2.0), P, DELTA, EPS, 1.0)
    with pytest.raises(ConfigError):
        build_psi(PsiSpec(k1=1e-4), P, DELTA, EPS, 1.0)


def test_smoothstep():
    t = np.linspace(0, 1, 11)
    assert smoothstep5(0.0) == 0.0 and smoothstep5(1.0) == 1.0
    assert np.all(np.diff(smoothstep5(t)) > 0)


def test_zero_outside_support(psi):
    T = P.T
    assert psi(0.0, 1.0, 0.0) == 0.0
    assert psi(-0.3, 1.0, 0.0) == 0.0
    assert psi(T + DELTA, 1.0, 0.5) == 0.0
    assert psi(T + 0.5, 1.0, 0.5) == 0.0
    assert psi(0.5, 1.0, -1.2) == 0.0
    assert psi(0.5, 1.0, 1.6) == 0.0
    assert psi(0.5, -1.0, 0.2) == 0.0


def test_bounds(psi):
    s = np.linspace(0.0, P.T + 1, 41)[:, None, None]
    x = np.linspace(-1, 15, 81)[None, :, None]
    w = np.linspace(-1.2, 2.2, 17)[None, None, :]
    vals = psi(s, x, w)
    assert vals.min() >= 0.0
    assert vals.max() <= PsiSpec().k1
    assert psi.sup <= PsiSpec().k1


def test_strip_slope(psi):
    s, w = 0.5, 0.2
    x = -psi.strip / 2
    h = 1e-7
    slope = (psi(s, x + h, w) - psi(s, x - h, w)) / (2 * h)
    assert slope >= PsiSpec().slope_b - 1e-6 and slope > 1


@given(st.floats(0.01, 1.04), st.floats(-0.2, 3.0), st.floats(0.0, 3.0), st.floats(0.0, 1.0))
def test_nondecreasing_in_x(s, x, dx, wf):
    psi = _default()
    w = wf * s
    assert psi(s, x + dx, w) >= psi(s, x, w) - 1e-14


_DEFAULT = []


def _default():
    if not _DEFAULT:
        _DEFAULT.append(build_psi(PsiSpec(), P, DELTA, EPS, 1.0))
    return _DEFAULT[0]


def test_w_independent_on_extended_domain(psi):
    for s in (0.2, 0.7, 1.0, 1.02):
        w = np.linspace(-DELTA, s + DELTA, 9)
        vals = psi(s, 0.4, w)
        assert np.ptp(vals) == 0.0


def test_analytic_derivatives_match_differences(psi):
    pts = [(0.5, -0.004, 0.2), (0.5, 0.02, 0.2), (1.01, 0.01, 0.3), (1.03, 0.0, 0.5),
           (0.3, 0.01, -0.7), (0.6, 0.02, 1.3)]
    for s, x, w in pts:
        an = psi.derivatives(s, x, w)
        fd = _fd_derivatives(psi, s, x, w)
        for a, b in zip(an[:4], fd[:4]):
            assert float(a) == pytest.approx(float(b), rel=1e-4, abs=1e-6)


def test_validate_zero_psi_fails_slope():
    rep = validate_psi(ZeroPsi(), P, Exponential(1.0), ExponentialClaims(1.0), EPS, DELTA, 1.0,
                       n_collar=4)
    # only the dividend term survives: residual M - (M - k2) = k2
    assert rep.min_residual == pytest.approx(1.0)
    assert rep.residual_passed and not rep.slope_passed and not rep.passed


def test_validate_rejects_k2():
    with pytest.raises(ConfigError):
        validate_psi(ZeroPsi(), P, Exponential(1.0), ExponentialClaims(1.0), EPS, DELTA, 2.0)


@pytest.mark.slow
def test_default_spec_validates(psi):
    rep = validate_psi(psi, P, Exponential(1.0), ExponentialClaims(1.0), EPS, DELTA, 1.0)
    assert rep.passed
    assert rep.min_residual >= 0.0
    assert rep.min_strip_slope >= 1.02 - 1e-6


@pytest.mark.slow
def test_validates_for_renewal_law():
    law = Erlang(2, 1.0)
    psi = build_psi(PsiSpec(), P, 0.1, 0.1, law.rate_max(0.0, 2.2))
    rep = validate_psi(psi, P, law, ExponentialClaims(1.0), 0.1, 0.1, 1.0, n_collar=60)
    assert rep.passed
