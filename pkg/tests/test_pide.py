from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from artifact.errors import NumericError
from artifact.model import ExponentialClaims, ModelParams, PointMass, TabulatedCdf
from artifact.pide import (ControlPair, DerivBundle, Tolerances, cell_weights, hamiltonian,
                           hamiltonian_n, maximize_hamiltonian, nonlocal_integral,
                           nonlocal_matrix, nonlocal_on_grid, optimal_dividend, optimal_gamma)

P = ModelParams(p=1.5, r=0.03, mu=0.08, sigma=0.3, c=0.05, M=2.0, T=1.0)
ZERO = DerivBundle(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)

finite = st.floats(-10.0, 10.0, allow_nan=False)
bundles = st.builds(DerivBundle, st.floats(0.0, 5.0), finite, finite, finite, finite,
                    st.floats(-3.0, 1.0))


def written_out(x, d, g, a, params, lam, eps):
    """The Hamiltonian typed term by term."""
    s2 = params.sigma ** 2
    return (s2 * g ** 2 * x ** 2 * d.v_xx / 2
            + (params.p + params.r * x + (params.mu - params.r) * g * x - a) * d.v_x
            + d.v_w + lam * d.i_delta + a - params.c * d.v
            + eps / 2 * (d.v_xx + d.v_ww))


def test_hamiltonian_examples():
    assert hamiltonian(1.3, ZERO, ControlPair(0.4, P.M), P, 1.0) == P.M
    d = DerivBundle(0.0, 1.0, 0.0, 0.0, 0.0, 0.0)
    assert hamiltonian(2.0, d, ControlPair(0.0, 0.0), P, 1.0) == pytest.approx(P.p + P.r * 2.0)


def test_hamiltonian_matches_written_formula():
    rng = np.random.default_rng(1)
    for _ in range(100):
        d = DerivBundle(*rng.uniform(-3, 3, 6))
        x, g, a, lam = rng.uniform(-0.1, 8), rng.uniform(0, 1), rng.uniform(0, 2), rng.uniform(0, 3)
        got = hamiltonian(x, d, ControlPair(g, a), P, lam)
        assert got == pytest.approx(written_out(x, d, g, a, P, lam, 0.0), rel=1e-14, abs=1e-14)


def test_perturbation_examples():
    d = DerivBundle(0.3, 0.7, 0.1, 2.0, 2.0, -0.2)
    c = ControlPair(0.5, 0.0)
    assert hamiltonian_n(1.0, d, c, P, 1.0, 0.0) == hamiltonian(1.0, d, c, P, 1.0)
    assert hamiltonian_n(1.0, d, c, P, 1.0, 0.1) == pytest.approx(
        hamiltonian(1.0, d, c, P, 1.0) + 0.2, abs=1e-14)


@given(bundles, st.floats(0.0, 0.5))
def test_perturbation_additivity(d, eps):
    c = ControlPair(0.3, 1.5)
    lhs = hamiltonian_n(0.8, d, c, P, 1.2, eps)
    rhs = hamiltonian(0.8, d, c, P, 1.2) + eps / 2 * (d.v_xx + d.v_ww)
    assert lhs == pytest.approx(rhs, rel=1e-14, abs=1e-13)


def test_maximizer_examples():
    params = ModelParams(p=1.0, r=0.03, mu=0.08, sigma=0.2, c=0.1, M=2.0, T=1.0)
    assert float(optimal_dividend(1.0, params, Tolerances(tie_tol=0.0))) == params.p
    assert float(optimal_dividend(0.5, params)) == params.M
    assert float(optimal_gamma(1.0, 2.0, -1.0, params)) == 1.0
    assert float(optimal_gamma(1.0, 1.0, 1.0, params)) == 1.0
    assert float(optimal_gamma(1e-7, 1.0, -5.0, params)) == 1.0  # small surplus rule
    d = DerivBundle(1.0, 2.0, 0.0, -1.0, 0.0, 0.0)
    res = maximize_hamiltonian(1.0, d, params, 1.0, 0.0)
    assert (res.ctrl.gamma, res.ctrl.a) == (1.0, 0.0)
    g = np.linspace(0.0, 1.0, 1001)[:, None]
    a = np.array([0.0, params.p, params.M])[None, :]
    brute = hamiltonian(1.0, d, ControlPair(g, a), params, 1.0).max()
    assert res.value >= brute - 1e-9


def test_interior_vertex():
    # concave case with an interior argmax, written out by hand
    x, vx, vxx = 2.0, 0.5, -3.0
    expected = (P.mu - P.r) * vx / (P.sigma ** 2 * x * -vxx)
    assert 0 < expected < 1
    assert float(optimal_gamma(x, vx, vxx, P)) == pytest.approx(expected, rel=1e-14)


@given(bundles, st.floats(-0.05, 8.0), st.floats(0.0, 3.0), st.floats(0.0, 0.2))
def test_maximizer_dominates_grid(d, x, lam, eps):
    assume(not 0 < x <= 1e-6)
    assume(abs(d.v_x - 1.0) > 1e-6)
    res = maximize_hamiltonian(x, d, P, lam, eps)
    g = np.linspace(0.0, 1.0, 1001)[:, None]
    a = np.array([0.0, P.p, P.M])[None, :]
    brute = hamiltonian_n(x, d, ControlPair(g, a), P, lam, eps).max()
    assert res.value >= brute - 1e-9
    assert 0.0 <= res.ctrl.gamma <= 1.0 and res.ctrl.a in (0.0, P.p, P.M)


@given(bundles, st.floats(-0.05, 8.0), st.floats(0, 1), st.floats(0, 2))
def test_maximizer_beats_any_control(d, x, g, a):
    assume(not 0 < x <= 1e-6)
    assume(abs(d.v_x - 1.0) > 1e-6)
    res = maximize_hamiltonian(x, d, P, 1.0, 0.05)
    assert res.value >= hamiltonian_n(x, d, ControlPair(g, a), P, 1.0, 0.05) - 1e-10


def test_maximizer_rejects_nan():
    with pytest.raises(NumericError):
        maximize_hamiltonian(1.0, DerivBundle(0, float("nan"), 0, 0, 0, 0), P, 1.0, 0.0)


# ------------------------------------------------------------------ nonlocal


def test_cell_weights_partition_mass():
    law = ExponentialClaims(0.8)
    near, far = cell_weights(law, 0.05, 100)
    assert np.all(near >= 0) and np.all(far >= 0)
    assert (near + far).sum() == pytest.approx(float(law.cdf(5.0)), rel=1e-12)
    near0, far0 = cell_weights(PointMass(0.0), 0.1, 5)
    assert near0[0] == 1.0 and far0.sum() == 0.0


def test_nonlocal_closed_form_example():
    # v(x) = x for x >= 0, delta = 0, x = 1, unit exponential claims: e^{-1} - 1
    got = nonlocal_integral(lambda u: np.maximum(u, 0.0), 1.0, 1.0, 0.0, ExponentialClaims(1.0))
    assert got == pytest.approx(math.exp(-1.0) - 1.0, abs=1e-12)


def test_nonlocal_constant_and_empty():
    law = ExponentialClaims(1.0)
    K = 2.5
    got = nonlocal_integral(lambda u: np.full_like(u, K), K, 0.7, 0.05, law)
    assert got == pytest.approx(K * float(law.cdf(0.75)) - K, abs=1e-12)
    assert nonlocal_integral(lambda u: u, 0.4, -0.2, 0.05, law) == -0.4


@pytest.mark.parametrize("law", [ExponentialClaims(0.6), TabulatedCdf((0.0, 0.3, 2.0),
                                                                      (0.0, 0.5, 1.0))])
def test_matrix_and_convolution_agree(law):
    rng = np.random.default_rng(3)
    vals = rng.uniform(0, 2, (4, 37))
    h = 0.07
    by_matrix = vals @ nonlocal_matrix(law, h, 37).T
    assert np.allclose(nonlocal_on_grid(vals, law, h), by_matrix, atol=1e-13)


@given(st.lists(st.floats(0.0, 1.0), min_size=12, max_size=12),
       st.lists(st.floats(0.0, 1.0), min_size=12, max_size=12))
def test_nonlocal_monotone_in_field(base, bump):
    law = ExponentialClaims(0.9)
    lo = np.array(base)
    hi = lo + np.array(bump)
    assert np.all(nonlocal_on_grid(hi, law, 0.1) >= nonlocal_on_grid(lo, law, 0.1) - 1e-15)
