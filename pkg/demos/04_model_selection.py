# %% [markdown]
# # Choosing a dead-time model
#
# Non-paralyzable, paralyzable and two hybrid models are fitted to the same
# synthetic data. The chi-square table ranks them; hybrids that do not need
# their second dead time report which simpler model they reduce to.

# %%
import numpy as np

from twobeam import ResponseModel, fit_all_models, synthetic_points
from twobeam.fitting import fit_report

rng = np.random.default_rng(7)
grid = np.logspace(2.5, 7, 40)


def table(title, points):
    print(title)
    print(f"  {'model':6s} {'chi2/nu':>10s} {'log10 p':>10s}  reduces to")
    for name, ratio, log_p, reduced in fit_report(fit_all_models(points)):
        print(f"  {name:6s} {ratio:10.4g} {log_p:10.4g}  {reduced or '-'}")


# %% [markdown]
# ## Data from a non-paralyzable detector
# Phase counts are drawn as Poisson variables around the model rates, 30
# repetitions of 20 s at each of 40 levels.

# %%
np_points = synthetic_points(ResponseModel.np(83.0, 36.7e-9), grid, 20.0, 30, rng)
table("NP detector", np_points)

# %% [markdown]
# ## Data from a paralyzable detector
# Here the P model wins, and the NP fit is clearly worse. Each point is
# weighted by a standard error estimated from its own 30 cycles, so even the
# correct model scatters around chi2/nu of about 1.07 rather than 1.

# %%
p_model = ResponseModel.p(300.0, 40e-9)
p_grid = np.logspace(3, np.log10(0.9 / (np.e * 40e-9)), 40)
table("P detector", synthetic_points(p_model, p_grid, 20.0, 30, rng))
