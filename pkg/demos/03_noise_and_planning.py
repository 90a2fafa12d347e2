# %% [markdown]
# # Shot noise, measurement planning and drift
#
# How precisely can one nonlinearity point be measured, how should the
# three phases share the measurement time, and how long can one average
# before slow drift takes over?

# %%
import numpy as np

from twobeam import (allan_deviation, generate_arrivals, optimal_allocation,
                     sub_poissonian_sigma_rate, uncertainty_bound)
from twobeam.stats import sigma_delta_for_times

# %% [markdown]
# ## Shot-noise bound
# For 30 repetitions of 20 s each, the standard error falls below 1e-4
# only at a few hundred kHz.

# %%
for rate in (1e4, 1e5, 2e5, 1e6):
    b = uncertainty_bound(rate, 20.0, 30)
    print(f"{rate:8.0e} Hz: sigma(Delta) {b.sigma_delta:.3e}, mean of 30 {b.sigma_delta_mean:.3e}")

# Dead time regularises the counts, so their spread is below Poisson.
print("sub-Poissonian sigma(R) at 1 MHz, 517 ns, 20 s:",
      f"{sub_poissonian_sigma_rate(1e6, 517e-9, 20.0):.1f} Hz (Poisson {np.sqrt(1e6 / 20):.1f} Hz)")

# %% [markdown]
# ## Time allocation
# The combined-beam phase deserves a larger share than either single beam.

# %%
total = 60.0
t_a, t_b, t_ab = optimal_allocation(total)
print(f"optimal split {t_a / total:.4f} : {t_b / total:.4f} : {t_ab / total:.4f}")
equal = sigma_delta_for_times(2e5, 0.0, total / 3, total / 3, total / 3)
best = sigma_delta_for_times(2e5, 0.0, t_a, t_b, t_ab)
print(f"sigma with equal thirds {equal:.4e}, with the optimal split {best:.4e}")

# %% [markdown]
# ## Allan deviation
# White counting noise averages down as tau^-1/2. A slow sinusoidal drift
# of the source stops the decrease and turns the curve upward.

# %%
base = 0.01
counts, _ = np.histogram(generate_arrivals(2e4, 200.0, seed=1).timestamps,
                         bins=np.arange(0.0, 200.0 + base / 2, base))
t = np.arange(counts.size) * base
drifting = counts * (1 + 0.01 * np.sin(2 * np.pi * t / 60.0))
taus = base * 2.0 ** np.arange(0, 13)
white = allan_deviation(counts, base, taus)
drift = allan_deviation(drifting, base, taus)
for tau, a, b in zip(white.integration_times, white.relative_deviation,
                     drift.relative_deviation):
    print(f"tau {tau:7.2f} s   white {a:.2e}   with drift {b:.2e}")
