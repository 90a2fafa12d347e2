"""Weighted least-squares fits of nonlinearity models to measured points.

Fit parameters are the dark-count rate in Hz and dead times in ns.  The
optimiser works on their logarithms, so they stay positive, and uses a
Levenberg-Marquardt iteration with adaptive damping.  Trial steps that push
a measured rate outside the model's invertible range are rejected like any
other uphill step.

Reported standard errors are 1-sigma values from the Jacobian at the optimum,
computed with the measured standard errors of the points as weights (no
rescaling by chi2/nu).
"""

from dataclasses import dataclass, field
import math

import numpy as np

from .errors import FitError, ParameterDomainError
from .models import DetectorParams, ModelKind, ResponseModel, model_delta_curve
from .stats import ChiSquareReport, chi_square

__all__ = ["FitResult", "PARAM_NAMES", "build_model", "weighted_sse", "fit_delta",
           "fit_all_models", "fit_report"]

PARAM_NAMES = {
    ModelKind.NP: ("dark_rate_hz", "dead_time_np_ns"),
    ModelKind.P: ("dark_rate_hz", "dead_time_p_ns"),
    ModelKind.NP_P: ("dark_rate_hz", "dead_time_np_ns", "dead_time_p_ns"),
    ModelKind.P_NP: ("dark_rate_hz", "dead_time_np_ns", "dead_time_p_ns"),
}

FIT_KINDS = (ModelKind.NP, ModelKind.P, ModelKind.NP_P, ModelKind.P_NP)

# lower bounds keeping log-parameters finite; far below any physical value
_FLOOR = {"dark_rate_hz": 1e-9, "dead_time_np_ns": 1e-6, "dead_time_p_ns": 1e-6}
_CEILING = {"dark_rate_hz": 1e12, "dead_time_np_ns": 1e12, "dead_time_p_ns": 1e12}
# a hybrid dead time below this (or below its standard error) has vanished
COLLAPSE_NS = 0.1


@dataclass(frozen=True)
class FitResult:
    model_kind: ModelKind
    params: dict
    errors: dict
    covariance: np.ndarray
    chi2_report: ChiSquareReport
    converged: bool
    degenerate_to: ModelKind = None
    iterations: int = 0
    notes: tuple = field(default=())

    def response_model(self):
        return build_model(self.model_kind, self.params)

    def delta_curve(self, detected_rate_ab):
        return model_delta_curve(self.response_model(), detected_rate_ab)

    def to_dict(self):
        return {
            "model_kind": str(self.model_kind),
            "params": {k: float(v) for k, v in self.params.items()},
            "errors": {k: float(v) for k, v in self.errors.items()},
            "error_convention": "1-sigma Jacobian",
            "covariance": [[float(v) for v in row] for row in self.covariance],
            "chi2": self.chi2_report.to_dict(),
            "converged": self.converged,
            "degenerate_to": None if self.degenerate_to is None else str(self.degenerate_to),
            "iterations": self.iterations,
        }


def build_model(kind, params):
    """ResponseModel from fit parameters given in Hz and ns."""
    kind = ModelKind(kind)
    return ResponseModel(kind, DetectorParams(
        dark_rate=params["dark_rate_hz"],
        dead_time_np=params.get("dead_time_np_ns", 0.0) * 1e-9,
        dead_time_p=params.get("dead_time_p_ns", 0.0) * 1e-9,
    ))


def _arrays(points):
    pts = sorted(points, key=lambda p: (p.detected_rate_ab, p.delta_mean, p.delta_sem))
    y = np.array([p.detected_rate_ab for p in pts], dtype=float)
    d = np.array([p.delta_mean for p in pts], dtype=float)
    s = np.array([p.delta_sem for p in pts], dtype=float)
    return pts, y, d, s


def _residuals(kind, values, y, d, s):
    """Weighted residuals, or None when the parameters cannot describe the data."""
    names = PARAM_NAMES[kind]
    try:
        model = build_model(kind, dict(zip(names, values)))
        curve = model_delta_curve(model, y)
    except ParameterDomainError:
        return None
    r = (d - np.asarray(curve)) / s
    return r if np.all(np.isfinite(r)) else None


def weighted_sse(points, kind, params):
    """Sum of squared weighted residuals, independent of point order."""
    kind = ModelKind(kind)
    _, y, d, s = _arrays(points)
    r = _residuals(kind, [params[n] for n in PARAM_NAMES[kind]], y, d, s)
    if r is None:
        return math.inf
    return math.fsum(r * r)


def _initial_guess(kind, y, d):
    # dark rate: low-rate asymptote Delta * R_ab ~ R0
    r0 = d[0] * y[0]
    if not 0 < r0 < 0.5 * y[0]:
        r0 = 1e-2 * y[0]
    # dead time: for R0 = 0 the NP curve inverts exactly, Delta = s / (2 - s)
    # with s = R_ab tau; remove the dark-count share first
    dh = d[-1] - r0 / y[-1]
    if not dh > 0:
        dh = 1e-3
    tau_ns = 2.0 * dh / ((1.0 + dh) * y[-1]) * 1e9
    guesses = []
    if kind in (ModelKind.NP, ModelKind.P):
        guesses.append([r0, tau_ns])
    else:
        guesses.append([r0, tau_ns, 1e-3 * tau_ns])
        guesses.append([r0, 1e-3 * tau_ns, tau_ns])
    return guesses


def _make_feasible(kind, values, y, d, s):
    values = list(values)
    for _ in range(200):
        if _residuals(kind, values, y, d, s) is not None:
            return values
        # shrink dead times, then the dark rate, until the data are in range
        values = [values[0] * 0.9] + [v * 0.5 for v in values[1:]]
    return None


def _jacobian(fun, x, r0, h=1e-7):
    """Forward/backward difference Jacobian of ``fun`` at ``x``."""
    jac = np.empty((r0.size, x.size))
    for j in range(x.size):
        step = h * max(1.0, abs(x[j]))
        xp = x.copy()
        xp[j] += step
        rp = fun(xp)
        xm = x.copy()
        xm[j] -= step
        rm = fun(xm)
        if rp is not None and rm is not None:
            jac[:, j] = (rp - rm) / (2 * step)
        elif rp is not None:
            jac[:, j] = (rp - r0) / step
        elif rm is not None:
            jac[:, j] = (r0 - rm) / step
        else:
            raise FitError("Jacobian undefined: parameters sit on the model range boundary")
    return jac


def _levenberg_marquardt(fun, x0, lower, upper, max_iter=1000, xtol=1e-13, ftol=1e-16,
                         stall_tol=1e-8):
    """Minimise ``sum(fun(x)**2)`` subject to ``lower <= x <= upper``.

    Returns ``(x, residuals, iterations, converged)``.
    """
    x = np.clip(np.asarray(x0, dtype=float), lower, upper)
    r = fun(x)
    if r is None:
        raise FitError("initial guess outside the model range", best=x)
    cost = math.fsum(r * r)
    lam = 1e-3
    stalled = 0
    for it in range(1, max_iter + 1):
        jac = _jacobian(fun, x, r)
        grad = jac.T @ r
        # variables pinned at a bound with the descent direction pointing
        # outward stay fixed; solving for them too would spoil the clipped step
        pinned = ((x <= lower) & (grad > 0)) | ((x >= upper) & (grad < 0))
        free = ~pinned
        if not np.any(free):
            return x, r, it, True
        a = jac[:, free].T @ jac[:, free]
        g = grad[free]
        diag = np.diag(a).copy()
        diag[diag <= 0] = 1.0
        while True:
            step = np.zeros_like(x)
            try:
                step[free] = np.linalg.solve(a + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                step[free] = -np.linalg.pinv(a + lam * np.diag(diag)) @ g
            x_new = np.clip(x + step, lower, upper)
            r_new = fun(x_new)
            cost_new = math.inf if r_new is None else math.fsum(r_new * r_new)
            if cost_new <= cost:
                lam = max(lam / 10.0, 1e-15)
                moved = np.max(np.abs(x_new - x) / (np.abs(x) + xtol))
                gained = cost - cost_new
                x, r, cost = x_new, r_new, cost_new
                if moved < xtol or gained <= ftol * max(cost, 1.0):
                    return x, r, it, True
                # creeping along a flat valley: statistically nothing left to gain
                stalled = stalled + 1 if gained <= stall_tol * max(cost, 1.0) else 0
                if stalled >= 3:
                    return x, r, it, True
                break
            lam *= 10.0
            if lam > 1e20:
                # no downhill step left at machine precision
                return x, r, it, True
    return x, r, max_iter, False


def _natural_jacobian(kind, values, y, d, s):
    """Jacobian of the weighted residuals in Hz/ns units, one-sided near zero."""
    values = np.asarray(values, dtype=float)
    r0 = _residuals(kind, values, y, d, s)
    jac = np.empty((y.size, values.size))
    # dead-time steps scale with the largest dead time, so a vanished one
    # still gets a step that moves the curve measurably
    scales = [1.0] + [float(np.max(values[1:]))] * (values.size - 1)
    for j in range(values.size):
        h = 1e-6 * max(abs(values[j]), scales[j])
        up = values.copy()
        up[j] += h
        dn = values.copy()
        dn[j] -= h
        rp = _residuals(kind, up, y, d, s)
        rm = _residuals(kind, dn, y, d, s) if dn[j] > 0 else None
        if rp is not None and rm is not None:
            jac[:, j] = (rp - rm) / (2 * h)
        elif rp is not None:
            jac[:, j] = (rp - r0) / h
        elif rm is not None:
            jac[:, j] = (r0 - rm) / h
        else:
            jac[:, j] = 0.0
    return jac


def _covariance(kind, values, y, d, s):
    jac = _natural_jacobian(kind, values, y, d, s)
    a = jac.T @ jac
    try:
        cov = np.linalg.inv(a)
        if not np.all(np.isfinite(cov)) or np.any(np.diag(cov) < 0):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(a)
    return 0.5 * (cov + cov.T)


def _collapse(kind, params, errors):
    if kind not in (ModelKind.NP_P, ModelKind.P_NP):
        return None
    vanished = {}
    for name in ("dead_time_np_ns", "dead_time_p_ns"):
        if params[name] < max(COLLAPSE_NS, errors[name]):
            vanished[name] = params[name] / max(COLLAPSE_NS, errors[name])
    if not vanished:
        return None
    worst = min(vanished, key=vanished.get)
    return ModelKind.NP if worst == "dead_time_p_ns" else ModelKind.P


def fit_delta(points, model_kind, initial_guess=None, max_iter=1000):
    """Fit a nonlinearity model to measured points.

    Parameters
    ----------
    points : sequence of NonlinearityPoint
        Measured points; each needs a positive ``delta_sem``.
    model_kind : ModelKind or str
        One of ``NP``, ``P``, ``NP-P``, ``P-NP``.
    initial_guess : dict, optional
        Starting values keyed by parameter name (Hz, ns).  Defaults come from
        the low-rate and saturation asymptotes of the data.

    Raises
    ------
    FitError
        If the iteration does not converge; ``err.best`` holds the best
        parameters found.
    """
    kind = ModelKind(model_kind)
    if kind not in FIT_KINDS:
        raise ParameterDomainError(
            f"{kind} cannot be fitted: its nonlinearity curve is identical to an NP curve")
    names = PARAM_NAMES[kind]
    pts, y, d, s = _arrays(points)
    if len(pts) < len(names) + 1:
        raise ParameterDomainError(
            f"{kind} fit needs at least {len(names) + 1} points, got {len(pts)}")
    if np.any(~(s > 0)):
        raise ParameterDomainError("every point needs a positive delta_sem (repetitions >= 2)")

    if initial_guess is not None:
        starts = [[float(initial_guess[n]) for n in names]]
    else:
        starts = _initial_guess(kind, y, d)

    lower = np.log([_FLOOR[n] for n in names])
    upper = np.log([_CEILING[n] for n in names])

    def fun(theta):
        return _residuals(kind, np.exp(theta), y, d, s)

    best = None
    for start in starts:
        start = _make_feasible(kind, start, y, d, s)
        if start is None:
            continue
        x0 = np.log(np.maximum(start, [_FLOOR[n] for n in names]))
        theta, r, iters, ok = _levenberg_marquardt(fun, x0, lower, upper, max_iter=max_iter)
        cost = math.fsum(r * r)
        if best is None or cost < best[0]:
            best = (cost, theta, iters, ok)
    if best is None:
        raise FitError(f"no feasible starting point for the {kind} model")
    cost, theta, iters, ok = best
    values = np.exp(theta)
    params = dict(zip(names, (float(v) for v in values)))
    if not ok:
        raise FitError(f"{kind} fit did not converge in {max_iter} iterations", best=params)

    cov = _covariance(kind, values, y, d, s)
    errors = dict(zip(names, (float(math.sqrt(max(c, 0.0))) for c in np.diag(cov))))
    report = chi_square(pts, lambda rates: model_delta_curve(build_model(kind, params), rates),
                        len(names))
    return FitResult(kind, params, errors, cov, report, True,
                     _collapse(kind, params, errors), iters)


def fit_all_models(points, kinds=FIT_KINDS):
    """Fit every model kind; hybrids also start from the pure-model optima.

    A model that fails is skipped and its error is recorded in the ``notes``
    of every returned result.  Raises ``FitError`` only when no model could
    be fitted.
    """
    kinds = [ModelKind(k) for k in kinds]
    results = {}
    failures = {}
    for kind in (k for k in kinds if k in (ModelKind.NP, ModelKind.P)):
        try:
            results[kind] = fit_delta(points, kind)
        except (FitError, ParameterDomainError) as exc:
            failures[kind] = str(exc)
    for kind in (k for k in kinds if k in (ModelKind.NP_P, ModelKind.P_NP)):
        candidates = []
        try:
            candidates.append(fit_delta(points, kind))
        except (FitError, ParameterDomainError) as exc:
            failures[kind] = str(exc)
        for pure in (ModelKind.NP, ModelKind.P):
            if pure not in results:
                continue
            pp = results[pure].params
            tau = pp.get("dead_time_np_ns", pp.get("dead_time_p_ns"))
            guess = {"dark_rate_hz": pp["dark_rate_hz"],
                     "dead_time_np_ns": tau if pure is ModelKind.NP else 1e-3 * tau,
                     "dead_time_p_ns": tau if pure is ModelKind.P else 1e-3 * tau}
            try:
                candidates.append(fit_delta(points, kind, initial_guess=guess))
            except (FitError, ParameterDomainError):
                pass
        if candidates:
            failures.pop(kind, None)
            results[kind] = min(candidates, key=lambda f: f.chi2_report.chi2)
    if not results:
        raise FitError(f"no model could be fitted: {failures}")
    out = []
    for kind in kinds:
        if kind in results:
            out.append(results[kind])
    if failures:
        out = [_with_note(f, failures) for f in out]
    return out


def _with_note(result, failures):
    notes = tuple(f"{k} failed: {v}" for k, v in failures.items())
    return FitResult(result.model_kind, result.params, result.errors, result.covariance,
                     result.chi2_report, result.converged, result.degenerate_to,
                     result.iterations, notes)


def fit_report(results):
    """Rows of ``(model, chi2/nu, log10 p, degenerate_to)`` for a ranking table."""
    rows = [(str(r.model_kind), r.chi2_report.chi2_per_dof, r.chi2_report.log10_p,
             None if r.degenerate_to is None else str(r.degenerate_to)) for r in results]
    return sorted(rows, key=lambda row: row[1])
