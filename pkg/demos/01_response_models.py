# %% [markdown]
# # Detector response models and the two-beam nonlinearity
#
# A counting detector with dead time registers fewer events than arrive.
# This script evaluates the closed-form response laws, inverts them, and
# turns them into the nonlinearity curve a two-beam measurement would see.

# %%
import numpy as np

from twobeam import (DetectorParams, ModelKind, ResponseModel, afterpulse_equivalent_params,
                     inverse_response, model_delta_curve, peak, response)

# %% [markdown]
# ## Response laws
# Non-paralyzable (NP) detectors saturate at 1/tau; paralyzable (P) ones
# peak and then fall as the insensitive period keeps being extended.

# %%
np_det = ResponseModel.np(dark_rate=83.0, dead_time=36.7e-9)
p_det = ResponseModel.p(dark_rate=83.0, dead_time=36.7e-9)
incident = np.logspace(3, 9, 7)
for r, a, b in zip(incident, response(np_det, incident), response(p_det, incident)):
    print(f"R = {r:9.3g} Hz   NP {a:11.4g} Hz   P {b:11.4g} Hz")

r_pk, y_pk = peak(p_det)
print(f"P model peaks at R = {r_pk:.4g} Hz with {y_pk:.4g} Hz detected")

# %% [markdown]
# ## Inversion
# Measured rates are mapped back to incident rates on the low-rate branch.
# Above the peak of a P detector there is no solution, and the error says
# where the peak is.

# %%
y = 1e6
r = inverse_response(np_det, y)
print(f"NP: {y:g} Hz detected <- {r:.6g} Hz incident; round trip {response(np_det, r):.12g}")
try:
    inverse_response(p_det, 1.01 * y_pk)
except ValueError as err:
    print("P above peak:", err)

# %% [markdown]
# ## Nonlinearity curve
# Dark counts dominate at low rates (Delta ~ R0 / R), dead time at high
# rates, so the curve is V-shaped with a minimum in between.

# %%
rates = np.logspace(2.2, 7, 15)
delta = model_delta_curve(np_det, rates)
for rate, d in zip(rates, delta):
    print(f"R_AB = {rate:9.3g} Hz   Delta = {d:.3e}")
k = int(np.argmin(delta))
print(f"minimum near {rates[k]:.3g} Hz, Delta = {delta[k]:.3e}")

# %% [markdown]
# ## Afterpulsing is invisible in the nonlinearity
# An afterpulsing detector maps exactly onto an NP detector with a rescaled
# dark rate and dead time, so its nonlinearity curve carries no extra
# information.

# %%
ap_params = DetectorParams(dark_rate=83.0, dead_time_np=36.7e-9, mean_afterpulses=0.05,
                           twilight_alpha=3e-9)
mapped, scale = afterpulse_equivalent_params(ap_params)
print(f"mapped dark rate {mapped.dark_rate:.4g} Hz, dead time {mapped.dead_time_np * 1e9:.4g} ns,"
      f" incident scale {scale:.4g}")
ap = ResponseModel(ModelKind.AP, ap_params)
equiv = ResponseModel(ModelKind.NP, mapped)
grid = np.logspace(3, 7, 5)
print("max relative difference of Delta:",
      np.max(np.abs(model_delta_curve(ap, grid) / model_delta_curve(equiv, grid) - 1)))
