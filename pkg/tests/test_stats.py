import math
import warnings

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special

from twobeam.errors import ParameterDomainError
from twobeam.harness import NonlinearityPoint
from twobeam.stats import (allan_deviation, chi_square, log_gammaincc, shot_noise_sigma_delta,
                           sigma_delta_for_times, sub_poissonian_sigma_rate, uncertainty_bound)


# --- shot noise ---------------------------------------------------------------

def test_bound_at_reference_settings():
    b = uncertainty_bound(2e5, 20.0, 30)
    assert b.sigma_delta_mean == pytest.approx(1.29e-4, abs=0.005e-4)
    assert b.sigma_delta_mean == pytest.approx(math.sqrt(2 / 4e6) / math.sqrt(30), rel=1e-14)


def test_sigma_scaling():
    s = shot_noise_sigma_delta(1e5, 1.0)
    assert shot_noise_sigma_delta(4e5, 1.0) == pytest.approx(s / 2, rel=1e-14)
    assert shot_noise_sigma_delta(1e5, 9.0) == pytest.approx(s / 3, rel=1e-14)
    assert shot_noise_sigma_delta(1e5, 1.0, approximate=True) == pytest.approx(s, rel=1e-14)
    assert shot_noise_sigma_delta(1e5, 1.0, delta=0.5) > s


def test_sigma_rejects_bad_input():
    for args in [(0.0, 1.0), (1.0, 0.0), (-1.0, 1.0), (1.0, 1.0, -1.0)]:
        with pytest.raises(ParameterDomainError):
            shot_noise_sigma_delta(*args)
    with pytest.raises(ParameterDomainError):
        uncertainty_bound(1e5, 1.0, 0)


def test_times_form_reduces_to_equal_time_form():
    for d in (0.0, 0.1, 1.5):
        assert sigma_delta_for_times(3e4, d, 2.0, 2.0, 2.0) == pytest.approx(
            shot_noise_sigma_delta(3e4, 2.0, d), rel=1e-13)


def test_sub_poissonian_example():
    # (1 - 0.517) * sqrt(1e6 / 20)
    assert sub_poissonian_sigma_rate(1e6, 517e-9, 20.0) == pytest.approx(108.0, abs=0.05)
    assert sub_poissonian_sigma_rate(1e6, 517e-9, 20.0) == pytest.approx(
        0.483 * math.sqrt(5e4), rel=1e-12)


def test_sub_poissonian_limits():
    assert sub_poissonian_sigma_rate(1e4, 0.0, 1.0) == pytest.approx(100.0)
    assert sub_poissonian_sigma_rate(1e6, 1e-6, 1.0) == 0.0
    with pytest.raises(ParameterDomainError):
        sub_poissonian_sigma_rate(2e6, 1e-6, 1.0)


@settings(max_examples=100, deadline=None)
@given(r=st.floats(1.0, 1e7), load=st.floats(0.0, 1.0), t=st.floats(1e-3, 1e3))
def test_sub_poissonian_never_exceeds_poisson(r, load, t):
    assert sub_poissonian_sigma_rate(r, load / r, t) <= math.sqrt(r / t) * (1 + 1e-12)


# --- Allan deviation ----------------------------------------------------------

def _adev_oracle(y, m):
    # direct overlapping estimator, written with explicit loops
    z = [v / (sum(y) / len(y)) for v in y]
    n = len(z)
    terms = []
    for j in range(n - 2 * m + 1):
        a = sum(z[j:j + m]) / m
        b = sum(z[j + m:j + 2 * m]) / m
        terms.append((b - a) ** 2)
    return math.sqrt(0.5 * sum(terms) / len(terms))


def test_allan_matches_direct_formula(rng):
    y = rng.poisson(500, 200).astype(float)
    res = allan_deviation(y, 0.1, taus=[0.1, 0.3, 0.7, 1.0, 5.0])
    for tau, dev in zip(res.integration_times, res.relative_deviation):
        assert dev == pytest.approx(_adev_oracle(list(y), int(round(tau / 0.1))), rel=1e-10)


def test_allan_of_constant_is_zero():
    res = allan_deviation(np.full(1024, 37.0), 1.0)
    np.testing.assert_array_equal(res.relative_deviation, 0.0)


def test_allan_white_noise_slope(rng):
    y = rng.poisson(1e4, 2**16).astype(float)
    res = allan_deviation(y, 1e-3, taus=1e-3 * 2.0 ** np.arange(0, 9))
    slope = np.polyfit(np.log10(res.integration_times), np.log10(res.relative_deviation), 1)[0]
    assert slope == pytest.approx(-0.5, abs=0.05)
    # white-noise level is sqrt(1/N) per base window
    assert res.relative_deviation[0] == pytest.approx(0.01, rel=0.02)


def test_allan_drift_turns_upward(rng):
    t = np.arange(2**14)
    y = rng.poisson(1e4 * (1 + 0.02 * np.sin(2 * np.pi * t / 8000))).astype(float)
    # the longest usable tau stays well below the drift period
    res = allan_deviation(y, 1.0, taus=2.0 ** np.arange(11))
    k = int(np.argmin(res.relative_deviation))
    assert 0 < k < res.relative_deviation.size - 1
    assert res.relative_deviation[-1] > res.relative_deviation[k]


def test_allan_scale_invariance(rng):
    y = rng.poisson(300, 4096).astype(float)
    a = allan_deviation(y, 0.5).relative_deviation
    b = allan_deviation(7.25 * y, 0.5).relative_deviation
    np.testing.assert_allclose(a, b, rtol=1e-12)


def test_allan_omits_long_taus():
    y = np.arange(1.0, 11.0)
    with pytest.warns(RuntimeWarning):
        res = allan_deviation(y, 1.0, taus=[1.0, 5.0, 6.0])
    assert res.omitted == (6.0,)
    assert list(res.integration_times) == [1.0, 5.0]


def test_allan_rejects_bad_input():
    with pytest.raises(ParameterDomainError):
        allan_deviation([1.0], 1.0)
    with pytest.raises(ParameterDomainError):
        allan_deviation([1.0, 2.0, 3.0], 1.0, taus=[1.5])
    with pytest.raises(ParameterDomainError):
        allan_deviation([0.0, 0.0], 1.0)


def test_allan_default_taus_are_octaves():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        res = allan_deviation(np.ones(100) + np.arange(100) % 2, 2.0)
    np.testing.assert_array_equal(res.integration_times, 2.0 * 2.0 ** np.arange(6))


# --- incomplete gamma and chi-square -------------------------------------------

@pytest.mark.parametrize("a", [0.5, 1.0, 5.0, 19.0, 20.0, 150.0])
@pytest.mark.parametrize("ratio", [0.01, 0.5, 0.99, 1.0, 1.01, 2.0, 10.0])
def test_log_gammaincc_matches_scipy(a, ratio):
    x = a * ratio
    assert math.exp(log_gammaincc(a, x)) == pytest.approx(special.gammaincc(a, x),
                                                          rel=1e-11, abs=1e-300)


@pytest.mark.parametrize("a, x", [(19.0, 19000.0), (19.0, 500.0), (3.0, 1e5), (100.0, 2e4)])
def test_log_gammaincc_deep_tail(a, x):
    oracle = float(mpmath.log(mpmath.gammainc(a, x, mpmath.inf, regularized=True)))
    assert log_gammaincc(a, x) == pytest.approx(oracle, rel=1e-12)


def _points(deltas, sems, rates=None):
    rates = rates if rates is not None else np.logspace(3, 6, len(deltas))
    return [NonlinearityPoint(r, d, s, 30) for r, d, s in zip(rates, deltas, sems)]


def test_chi_square_zero_residual():
    pts = _points(np.full(10, 0.01), np.full(10, 1e-3))
    rep = chi_square(pts, lambda y: np.full_like(y, 0.01), 2)
    assert rep.chi2 == 0 and rep.p_value == 1.0 and rep.log10_p == 0.0 and rep.dof == 8


def test_chi_square_unit_residuals():
    pts = _points(np.full(12, 2e-3), np.full(12, 1e-3))
    rep = chi_square(pts, lambda y: np.full_like(y, 1e-3), 2)
    assert rep.chi2 == pytest.approx(12.0)
    assert rep.p_value == pytest.approx(special.gammaincc(5, 6), rel=1e-12)


def test_chi_square_p_at_expectation_near_half():
    ps = [chi_square(_points(np.ones(nu + 2), np.ones(nu + 2)),
                     lambda y: np.zeros_like(y) + 1 - math.sqrt(nu / (nu + 2)), 2).p_value
          for nu in (10, 40, 100)]
    assert all(0.4 < p < 0.55 for p in ps)
    assert abs(ps[2] - 0.5) < abs(ps[0] - 0.5)


def test_chi_square_requires_sem_and_dof():
    with pytest.raises(ParameterDomainError):
        chi_square(_points([0.1, 0.2, 0.3], [1e-3, 0.0, 1e-3]), lambda y: y * 0, 1)
    with pytest.raises(ParameterDomainError):
        chi_square(_points([0.1, 0.2], [1e-3, 1e-3]), lambda y: y * 0, 2)


def test_log10_p_monotone_and_finite():
    nu = 38
    ratios = np.logspace(0, 3, 40)
    vals = [log_gammaincc(nu / 2, r * nu / 2) / math.log(10) for r in ratios]
    assert all(math.isfinite(v) for v in vals)
    assert all(b < a for a, b in zip(vals, vals[1:]))
