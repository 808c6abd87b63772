# ---
# jupyter:
#   jupytext:
#     formats: py:percent
#   kernelspec:
#     display_name: Python 3
#     language: python
#     name: python3
# ---

# %% [markdown]
# # Complexity profiles and critical sample sizes

# %%
from simlab.complexity import (
    gaussian_rates,
    m_star,
    mixture_profile,
    profile_from_link,
    q_star,
    synthetic_profile,
)
from simlab.harness import ExperimentConfig, critical_curve, critical_m, scaling_exponent
from simlab.sim_model import GaussianHermite

# %% [markdown]
# ## Optimal degrees of synthetic profiles

# %%
d = 1000
for k in (3, 4, 5, 6):
    wn = synthetic_profile(gaussian_rates(k, True), d)
    nn = synthetic_profile(gaussian_rates(k, False), d)
    print(k, "with norm: l_T =", q_star(wn).degree, " without norm: l_m =", m_star(nn).degree)

# %%
for d in (100, 1000, 10000):
    mix = mixture_profile(10, d)
    print(d, "l_m =", m_star(mix).degree, " l_T =", q_star(mix).degree)

# %% [markdown]
# ## Monte Carlo profile of a concrete link

# %%
prof = profile_from_link(GaussianHermite(50, k=2, sigma=0.5), 4, n_mc=3000)
for l, (v, se) in prof.xi_map.items():
    print(l, f"{v:.4f} +- {se:.4f}")
print(m_star(prof), q_star(prof))

# %% [markdown]
# ## Critical sample size of the degree-2 spectral estimator

# %%
cfg = ExperimentConfig(link={"variant": "GaussianHermite", "k": 2, "sigma": 0.5}, algo="spectral2",
                       d_grid=[25, 50, 100], m_range=[0.25, 8], m_power=1, seeds=24,
                       rate_level=0.9, stop_after=2, record_wallclock=False)
pts = []
for d in cfg.d_grid:
    cur = critical_curve(cfg, d)
    pts.append((d, critical_m(cfg, d, cur)))
    print(d, [(m, round(r, 2)) for m, r in zip(cur["m"], cur["smoothed"])])
print("m_c", pts, "slope", scaling_exponent(pts))
