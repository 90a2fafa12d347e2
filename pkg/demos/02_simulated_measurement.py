# %% [markdown]
# # A simulated two-beam measurement
#
# Photon arrivals are drawn as a Poisson process and passed through an
# event-level detector model. Each measurement cycle records beam A, beam
# B and both beams together; their rates give one nonlinearity sample.

# %%
import numpy as np

from twobeam import (DetectorParams, MeasurementPlan, ResponseModel, SimConfig, fit_delta,
                     inverse_response, model_delta_curve, run_cycle, estimate_point, sweep)

params = DetectorParams(dark_rate=83.0, dead_time_np=36.7e-9)
model = ResponseModel.np(83.0, 36.7e-9)

# %% [markdown]
# ## One cycle
# Pick the incident rate that gives about 1 MHz detected with both beams.

# %%
plan = MeasurementPlan.equal_times(phase_time=1.0, repetitions=1)
config = SimConfig(0.0, params, seed=2024)
r_ab = inverse_response(model, 1e6)
records = run_cycle(r_ab, 0.5, plan, config)
for rec in records:
    print(f"cycle {rec.cycle_index} phase {rec.phase!s:2s} counts {rec.counts}")
point = estimate_point(records)
print(f"Delta = {point.delta_mean:.4e}, model {model_delta_curve(model, 1e6):.4e}")

# %% [markdown]
# ## A short sweep
# Ten rate levels, ten cycles each, one second per phase. The sweep is
# deterministic for a given seed. With so few cycles per level the standard
# errors are themselves noisy, which widens the chi-square spread below.

# %%
detected = np.logspace(2.5, 6.5, 10)
plan = MeasurementPlan.equal_times(1.0, 10, inverse_response(model, detected))
points = sweep(plan, config)
for p in points:
    expected = model_delta_curve(model, p.detected_rate_ab)
    print(f"{p.detected_rate_ab:10.4g} Hz  Delta {p.delta_mean:+.3e} +- {p.delta_sem:.1e}"
          f"  model {expected:.3e}")

# %% [markdown]
# ## Fit
# The NP model recovers the simulated dark rate and dead time.

# %%
fit = fit_delta(points, "NP")
for name, value in fit.params.items():
    print(f"{name:16s} {value:10.4f} +- {fit.errors[name]:.4f}")
print(f"chi2/nu = {fit.chi2_report.chi2_per_dof:.3f}, p = {fit.chi2_report.p_value:.3f}")
