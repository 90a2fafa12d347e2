"""Counting-statistics bounds, Allan deviation and chi-square testing."""

from dataclasses import dataclass, field
import math
import warnings

import numpy as np

from .errors import ParameterDomainError

__all__ = [
    "UncertaintyBound",
    "AllanSeries",
    "ChiSquareReport",
    "shot_noise_sigma_delta",
    "sigma_delta_for_times",
    "uncertainty_bound",
    "sub_poissonian_sigma_rate",
    "allan_deviation",
    "log_gammaincc",
    "chi_square",
]

_LN10 = math.log(10.0)


@dataclass(frozen=True)
class UncertaintyBound:
    detected_rate_ab: float
    integration_time: float
    repetitions: int
    sigma_delta: float
    sigma_delta_mean: float


@dataclass(frozen=True)
class AllanSeries:
    integration_times: np.ndarray
    relative_deviation: np.ndarray
    omitted: tuple = field(default=())

    def to_dict(self):
        return {
            "integration_times": [float(t) for t in self.integration_times],
            "relative_deviation": [float(d) for d in self.relative_deviation],
            "omitted": [float(t) for t in self.omitted],
        }


@dataclass(frozen=True)
class ChiSquareReport:
    chi2: float
    dof: int
    chi2_per_dof: float
    p_value: float
    log10_p: float

    def to_dict(self):
        return {"chi2": self.chi2, "dof": self.dof, "chi2_per_dof": self.chi2_per_dof,
                "p_value": self.p_value, "log10_p": self.log10_p}


def _positive(value, name):
    arr = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise ParameterDomainError(f"{name} must be positive and finite")
    return arr


def _unwrap(arr):
    arr = np.asarray(arr)
    return arr[()] if arr.ndim == 0 else arr


def shot_noise_sigma_delta(detected_rate_ab, integration_time, delta=0.0, approximate=False):
    """Shot-noise standard deviation of one nonlinearity sample.

    Exact form ``sqrt((1+D)(2+D) / (R_ab T))``; with ``approximate=True`` the
    small-nonlinearity form ``sqrt(2 / (R_ab T))``.
    """
    r = _positive(detected_rate_ab, "detected_rate_ab")
    t = _positive(integration_time, "integration_time")
    d = np.asarray(delta, dtype=float)
    if not np.all(np.isfinite(d)) or np.any(d <= -1):
        raise ParameterDomainError("delta must be greater than -1")
    if approximate:
        return _unwrap(np.sqrt(2.0 / (r * t)))
    return _unwrap(np.sqrt((1.0 + d) * (2.0 + d) / (r * t)))


def sigma_delta_for_times(detected_rate_ab, delta, t_a, t_b, t_ab):
    """Shot-noise sigma of a balanced nonlinearity sample with separate phase times.

    Each phase rate carries Poisson noise ``sqrt(R_i / T_i)``; the single-beam
    rates are ``(1 + delta) R_ab / 2``.
    """
    r = _positive(detected_rate_ab, "detected_rate_ab")
    ta, tb, tab = (_positive(t, "phase time") for t in (t_a, t_b, t_ab))
    if delta <= -1:
        raise ParameterDomainError("delta must be greater than -1")
    ra = rb = 0.5 * (1.0 + delta) * r
    var = (ra / ta + rb / tb) / r**2 + (ra + rb) ** 2 / r**4 * (r / tab)
    return _unwrap(np.sqrt(var))


def uncertainty_bound(detected_rate_ab, integration_time, repetitions, delta=0.0):
    """Shot-noise bound on the mean of ``repetitions`` nonlinearity samples."""
    n = int(repetitions)
    if n < 1:
        raise ParameterDomainError("repetitions must be at least 1")
    s = float(shot_noise_sigma_delta(detected_rate_ab, integration_time, delta))
    return UncertaintyBound(float(detected_rate_ab), float(integration_time), n,
                            s, s / math.sqrt(n))


def sub_poissonian_sigma_rate(detected_rate, dead_time, integration_time):
    """Standard deviation of a dead-time-limited detected rate, ``(1 - tau R) sqrt(R/T)``."""
    r = np.asarray(detected_rate, dtype=float)
    tau = np.asarray(dead_time, dtype=float)
    t = _positive(integration_time, "integration_time")
    if np.any(r < 0) or np.any(tau < 0) or not np.all(np.isfinite(r * tau)):
        raise ParameterDomainError("detected_rate and dead_time must be non-negative")
    load = tau * r
    if np.any(load > 1):
        raise ParameterDomainError(f"tau * R_det = {float(np.max(load))!r} exceeds 1")
    return _unwrap((1.0 - load) * np.sqrt(r / t))


def allan_deviation(samples, base_interval, taus=None):
    """Overlapping Allan deviation of ``samples`` relative to their mean.

    ``samples`` are counts (or intensities) accumulated over consecutive
    windows of ``base_interval`` seconds.  Each tau must be an integer
    multiple of ``base_interval``; taus without at least two full averaging
    windows are dropped with a warning and listed in ``omitted``.  Without
    ``taus`` all octave multiples that fit are used.
    """
    y = np.asarray(samples, dtype=float)
    if y.ndim != 1 or y.size < 2 or not np.all(np.isfinite(y)):
        raise ParameterDomainError("samples must be a finite 1-d series of length >= 2")
    base = float(_positive(base_interval, "base_interval"))
    mean = y.mean()
    if mean == 0:
        raise ParameterDomainError("samples have zero mean; relative deviation undefined")
    n = y.size
    if taus is None:
        ms = 2 ** np.arange(int(math.log2(n // 2)) + 1)
    else:
        taus = np.atleast_1d(np.asarray(taus, dtype=float))
        ms = np.rint(taus / base).astype(np.int64)
        if np.any(ms < 1) or np.any(np.abs(ms * base - taus) > 1e-9 * taus):
            raise ParameterDomainError("taus must be positive integer multiples of base_interval")
    z = y / mean
    csum = np.concatenate([[0.0], np.cumsum(z - z[0])])
    kept, devs, omitted = [], [], []
    for m in ms:
        m = int(m)
        if n < 2 * m:
            omitted.append(m * base)
            continue
        avg = (csum[m:] - csum[:-m]) / m
        d = avg[m:] - avg[:-m]
        kept.append(m * base)
        devs.append(math.sqrt(0.5 * float(np.mean(d * d))))
    if omitted:
        warnings.warn(f"too few samples for taus {omitted}; omitted", RuntimeWarning,
                      stacklevel=2)
    order = np.argsort(kept)
    return AllanSeries(np.asarray(kept)[order], np.asarray(devs)[order], tuple(omitted))


def _log_gamma_series(a, x):
    # log P(a, x), power series; converges fast for x < a + 1
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(100000):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * 1e-16:
            break
    else:
        raise RuntimeError("incomplete gamma series did not converge")
    return -x + a * math.log(x) - math.lgamma(a) + math.log(total)


def _log_gamma_cfrac(a, x):
    # log Q(a, x), modified Lentz continued fraction; for x >= a + 1
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 100000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    else:
        raise RuntimeError("incomplete gamma continued fraction did not converge")
    return -x + a * math.log(x) - math.lgamma(a) + math.log(h)


def log_gammaincc(a, x):
    """Natural log of the regularised upper incomplete gamma function Q(a, x).

    Stays finite far into the tail where Q itself underflows.
    """
    a, x = float(a), float(x)
    if not a > 0 or x < 0 or not (math.isfinite(a) and math.isfinite(x)):
        raise ParameterDomainError("log_gammaincc needs a > 0 and finite x >= 0")
    if x == 0:
        return 0.0
    if x < a + 1.0:
        return math.log1p(-math.exp(_log_gamma_series(a, x)))
    return _log_gamma_cfrac(a, x)


def chi_square(points, model_curve, n_params):
    """Weighted chi-square of nonlinearity points against ``model_curve``.

    Weights are the measured standard errors of the points.  The p-value is
    the upper tail of the chi-square distribution with
    ``len(points) - n_params`` degrees of freedom; ``log10_p`` remains usable
    when ``p_value`` underflows to zero.
    """
    points = list(points)
    dof = len(points) - int(n_params)
    if dof < 1:
        raise ParameterDomainError(
            f"{len(points)} points and {n_params} parameters leave no degrees of freedom")
    rates = np.array([p.detected_rate_ab for p in points], dtype=float)
    deltas = np.array([p.delta_mean for p in points], dtype=float)
    sems = np.array([p.delta_sem for p in points], dtype=float)
    if np.any(~(sems > 0)):
        raise ParameterDomainError(
            "every point needs a positive standard error; measure with repetitions >= 2")
    model = np.asarray(model_curve(rates), dtype=float)
    chi2 = float(np.sum(((deltas - model) / sems) ** 2))
    log_p = log_gammaincc(0.5 * dof, 0.5 * chi2)
    return ChiSquareReport(chi2, dof, chi2 / dof, math.exp(log_p), log_p / _LN10)
