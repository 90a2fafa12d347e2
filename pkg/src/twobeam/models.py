"""Closed-form rate models of single-photon detectors.

A detector fed with an incident photon rate ``R`` and dark-count rate ``R0``
registers detections at a rate ``f(R)`` that saturates because of dead time.
Five rate laws are available:

* ``NP``   non-paralyzable dead time, ``x / (1 + x tau_np)``
* ``P``    paralyzable dead time, ``x exp(-x tau_p)``
* ``NP-P`` hybrid, ``x exp(-x tau_p) / (1 + x tau_np)``
* ``P-NP`` hybrid, ``x exp(-x tau_p) / (1 + x tau_np exp(-x tau_p))``
* ``AP``   non-paralyzable with afterpulsing and twilight pulsing,
  ``1 / ((1/x - alpha) exp(-n_ap) + tau_np)``

where ``x = R + R0``.  All rates are in events per second and all times in
seconds.

The two-beam nonlinearity of a balanced measurement follows from the model as
``2 f(f^-1(R_ab) / 2) / R_ab - 1`` (see :func:`model_delta_curve`).
"""

from dataclasses import dataclass, field
from enum import Enum
import math

import numpy as np

from .errors import NoSolutionError, ParameterDomainError, SubDarkRateError

__all__ = [
    "ModelKind",
    "DetectorParams",
    "ResponseModel",
    "response",
    "inverse_response",
    "peak",
    "delta_from_rates",
    "model_delta_curve",
    "afterpulse_equivalent_params",
]

# relative slack when comparing a detected rate against the model range
_RANGE_RTOL = 1e-12


class ModelKind(str, Enum):
    NP = "NP"
    P = "P"
    NP_P = "NP-P"
    P_NP = "P-NP"
    AP = "AP"

    def __str__(self):
        return self.value


# DetectorParams fields each model kind is allowed to use
_USED_FIELDS = {
    ModelKind.NP: {"dark_rate", "dead_time_np"},
    ModelKind.P: {"dark_rate", "dead_time_p"},
    ModelKind.NP_P: {"dark_rate", "dead_time_np", "dead_time_p"},
    ModelKind.P_NP: {"dark_rate", "dead_time_np", "dead_time_p"},
    ModelKind.AP: {"dark_rate", "dead_time_np", "mean_afterpulses", "twilight_alpha"},
}


@dataclass(frozen=True)
class DetectorParams:
    """Physical detector parameters.

    Parameters
    ----------
    dark_rate : float
        Dark-count rate ``R0`` in events/s.
    dead_time_np : float
        Non-paralyzable dead time in seconds.
    dead_time_p : float
        Paralyzable dead time in seconds.
    mean_afterpulses : float
        Mean number of afterpulses per detection.
    twilight_alpha : float
        Twilight-pulse proportionality constant in seconds.
    """

    dark_rate: float = 0.0
    dead_time_np: float = 0.0
    dead_time_p: float = 0.0
    mean_afterpulses: float = 0.0
    twilight_alpha: float = 0.0

    def __post_init__(self):
        for name in ("dark_rate", "dead_time_np", "dead_time_p",
                     "mean_afterpulses", "twilight_alpha"):
            value = float(getattr(self, name))
            if not math.isfinite(value) or value < 0:
                raise ParameterDomainError(
                    f"{name} must be finite and non-negative, got {value!r}")
            object.__setattr__(self, name, value)


@dataclass(frozen=True)
class ResponseModel:
    kind: ModelKind
    params: DetectorParams = field(default_factory=DetectorParams)

    def __post_init__(self):
        try:
            kind = ModelKind(self.kind)
        except ValueError:
            raise ParameterDomainError(f"unknown model kind {self.kind!r}") from None
        object.__setattr__(self, "kind", kind)
        used = _USED_FIELDS[kind]
        for name in ("dead_time_np", "dead_time_p", "mean_afterpulses", "twilight_alpha"):
            if name not in used and getattr(self.params, name) != 0:
                raise ParameterDomainError(
                    f"{name} is not used by the {kind} model and must be zero")
        if kind is ModelKind.AP:
            p = self.params
            if not p.twilight_alpha * math.exp(-p.mean_afterpulses) < p.dead_time_np:
                raise ParameterDomainError(
                    "AP model requires alpha*exp(-n_ap) < dead_time_np "
                    f"(alpha={p.twilight_alpha!r}, n_ap={p.mean_afterpulses!r}, "
                    f"dead_time_np={p.dead_time_np!r})")

    @classmethod
    def np(cls, dark_rate, dead_time):
        return cls(ModelKind.NP, DetectorParams(dark_rate=dark_rate, dead_time_np=dead_time))

    @classmethod
    def p(cls, dark_rate, dead_time):
        return cls(ModelKind.P, DetectorParams(dark_rate=dark_rate, dead_time_p=dead_time))

    @property
    def is_peaked(self):
        """True when the response has a finite maximum and then falls."""
        return self.kind in (ModelKind.P, ModelKind.NP_P, ModelKind.P_NP) \
            and self.params.dead_time_p > 0


def _as_rates(values, name):
    arr = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ParameterDomainError(f"{name} must be finite")
    if np.any(arr < 0):
        raise ParameterDomainError(f"{name} must be non-negative")
    return arr


def _unwrap(arr):
    return arr[()] if arr.ndim == 0 else arr


def _rate_law(kind, p, x):
    """Detected rate as a function of the total arrival rate ``x = R + R0``."""
    if kind is ModelKind.NP:
        return x / (1.0 + x * p.dead_time_np)
    if kind is ModelKind.P:
        return x * np.exp(-x * p.dead_time_p)
    if kind is ModelKind.NP_P:
        return x * np.exp(-x * p.dead_time_p) / (1.0 + x * p.dead_time_np)
    if kind is ModelKind.P_NP:
        e = np.exp(-x * p.dead_time_p)
        return x * e / (1.0 + x * p.dead_time_np * e)
    # AP, written as 1 / (s/x + tau_np - alpha s) so x = 0 maps cleanly to 0
    s = math.exp(-p.mean_afterpulses)
    with np.errstate(divide="ignore"):
        inv = np.where(x > 0, s / np.where(x > 0, x, 1.0), np.inf)
    return 1.0 / (inv + p.dead_time_np - p.twilight_alpha * s)


def response(model, incident_rate):
    """Detected rate for the given incident photon rate(s)."""
    r = _as_rates(incident_rate, "incident_rate")
    return _unwrap(np.asarray(_rate_law(model.kind, model.params, r + model.params.dark_rate)))


def _peak_total_rate(kind, p):
    """Total arrival rate ``x`` at which a peaked model attains its maximum."""
    tp, tn = p.dead_time_p, p.dead_time_np
    if kind is ModelKind.NP_P and tn > 0:
        # root of 1 - tp x - tp tn x^2 = 0
        return 2.0 / (tp + math.sqrt(tp * tp + 4.0 * tp * tn))
    return 1.0 / tp


def peak(model):
    """Return ``(incident_rate, detected_rate)`` at the maximum of the response.

    Non-paralyzable-type models never reach their bound, so the incident rate
    is ``inf`` and the detected rate is the asymptote ``1/tau_eff`` (``inf``
    for a dead-time-free detector).
    """
    p = model.params
    if model.is_peaked:
        x = _peak_total_rate(model.kind, p)
        r = max(x - p.dark_rate, 0.0)
        return r, float(response(model, r))
    if model.kind is ModelKind.AP:
        tau_eff = p.dead_time_np - p.twilight_alpha * math.exp(-p.mean_afterpulses)
    else:
        tau_eff = p.dead_time_np
    return math.inf, (1.0 / tau_eff if tau_eff > 0 else math.inf)


def inverse_response(model, detected_rate):
    """Incident rate producing ``detected_rate``, taken on the low-rate branch.

    Raises
    ------
    NoSolutionError
        If the detected rate exceeds the largest rate the model can produce.
    SubDarkRateError
        If the detected rate is below the dark response ``response(model, 0)``.
    """
    y = _as_rates(detected_rate, "detected_rate")
    p = model.params
    y0 = float(response(model, 0.0))
    if np.any(y < y0 * (1.0 - _RANGE_RTOL)):
        raise SubDarkRateError(
            f"detected rate {float(np.min(y))!r} is below the dark response {y0!r}")
    r_peak, y_peak = peak(model)

    if not model.is_peaked:
        if np.any(y >= y_peak):
            raise NoSolutionError(
                f"detected rate {float(np.max(y))!r} is not below the saturation "
                f"bound {y_peak!r}", peak=y_peak)
        if model.kind is ModelKind.AP:
            s = math.exp(-p.mean_afterpulses)
            tau_eff = p.dead_time_np - p.twilight_alpha * s
            with np.errstate(divide="ignore"):
                x = s / (1.0 / y - tau_eff)
        else:
            # NP, or a hybrid/P model with vanishing paralyzable dead time
            x = y / (1.0 - y * p.dead_time_np)
        return _unwrap(np.maximum(x - p.dark_rate, 0.0))

    if np.any(y > y_peak * (1.0 + _RANGE_RTOL)):
        raise NoSolutionError(
            f"detected rate {float(np.max(y))!r} exceeds the model peak {y_peak!r}",
            peak=y_peak)
    return _unwrap(_bisect_branch(model, np.minimum(y, y_peak), r_peak))


def _dlog_rate(kind, p, x):
    """Derivative of ``log f`` with respect to the total arrival rate ``x``."""
    tp, tn = p.dead_time_p, p.dead_time_np
    if kind is ModelKind.P:
        return 1.0 / x - tp
    if kind is ModelKind.NP_P:
        return 1.0 / x - tp - tn / (1.0 + x * tn)
    e = np.exp(-x * tp)
    return 1.0 / x - tp - tn * e * (1.0 - x * tp) / (1.0 + x * tn * e)


def _bisect_branch(model, y, r_peak):
    """Solve ``response(R) = y`` on the monotone branch ``[0, r_peak]``.

    The bracket comes from ``f(R) <= R + R0`` (lower end) and from the peak
    location (upper end); Newton steps on ``log f`` are taken when they stay
    inside the bracket, bisection otherwise.
    """
    p = model.params
    kind = model.kind
    r0 = p.dark_rate
    x_pk = r_peak + r0
    tp, tn = p.dead_time_p, p.dead_time_np
    if kind is ModelKind.P_NP:
        growth = math.exp(x_pk * tp) + x_pk * tn
    else:
        growth = math.exp(x_pk * tp) * (1.0 + x_pk * tn)
    lo = np.clip(y - r0, 0.0, r_peak)
    hi = np.clip(y * growth - r0, lo, r_peak)
    at_peak = y >= response(model, r_peak)
    log_y = np.log(np.where(y > 0, y, 1.0))
    # start from the first-order inverse, which is close on the low-rate side
    load = y * (tn + tp)
    with np.errstate(divide="ignore"):
        first = np.where(load < 1.0, y / np.where(load < 1.0, 1.0 - load, 1.0) - r0, np.nan)
    r = np.where((first > lo) & (first < hi), first, 0.5 * (lo + hi))
    for _ in range(400):
        x = r + r0
        with np.errstate(divide="ignore", invalid="ignore"):
            g = np.log(_rate_law(kind, p, x)) - log_y
        lo = np.where(g < 0, r, lo)
        hi = np.where(g > 0, r, hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = r - g / _dlog_rate(kind, p, x)
        inside = np.isfinite(newton) & (newton > lo) & (newton < hi)
        r_next = np.where(inside, newton, 0.5 * (lo + hi))
        r_next = np.where(g == 0, r, r_next)
        done = (np.abs(r_next - r) <= 2e-16 * np.abs(r)) | (g == 0) | ~(hi > lo)
        r = r_next
        if np.all(done):
            break
    return np.where(at_peak, r_peak, np.where(y <= response(model, 0.0), 0.0, r))


def delta_from_rates(rate_a, rate_b, rate_ab):
    """Two-beam nonlinearity ``(rate_a + rate_b) / rate_ab - 1``.

    Positive values mean a sublinear detector, negative values supralinear.
    """
    a = _as_rates(rate_a, "rate_a")
    b = _as_rates(rate_b, "rate_b")
    ab = _as_rates(rate_ab, "rate_ab")
    if np.any(ab == 0):
        raise ParameterDomainError("rate_ab must be positive")
    return _unwrap(np.asarray((a + b) / ab - 1.0))


def model_delta_curve(model, detected_rate_ab):
    """Expected nonlinearity of a balanced measurement at detected rate(s) ``R_ab``."""
    y = _as_rates(detected_rate_ab, "detected_rate_ab")
    if np.any(y == 0):
        raise ParameterDomainError("detected_rate_ab must be positive")
    r = np.asarray(inverse_response(model, y))
    return _unwrap(np.asarray(2.0 * np.asarray(response(model, 0.5 * r)) / y - 1.0))


def afterpulse_equivalent_params(params):
    """Map afterpulsing parameters onto an equivalent non-paralyzable detector.

    Returns ``(np_params, scale)`` such that the AP response at incident rate
    ``R`` equals the NP response of ``np_params`` at ``R * scale``.
    """
    ResponseModel(ModelKind.AP, params)
    s = math.exp(-params.mean_afterpulses)
    dead_time = params.dead_time_np - params.twilight_alpha * s
    if not dead_time > 0:
        raise ParameterDomainError(
            f"equivalent dead time {dead_time!r} s is not positive")
    mapped = DetectorParams(dark_rate=params.dark_rate / s, dead_time_np=dead_time)
    return mapped, 1.0 / s
