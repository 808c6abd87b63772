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
# # Estimators on planted data
#
# Spectral, online SGD and tensor unfolding on Gaussian and norm-stripped
# single-index models.

# %%
import numpy as np

from simlab import estimators as est
from simlab.sim_model import (
    GaussianHermite,
    NormalizedWrapper,
    build_transformation,
    csq_transformation,
    random_direction,
    sample_planted,
    stream_rng,
)


def planted(link, m, seed):
    w = random_direction(link.d, stream_rng(seed, 99))
    return sample_planted(link, w, m, seed)


# %% [markdown]
# ## Spectral estimator at degree 2

# %%
d = 100
link = GaussianHermite(d, k=2, sigma=0.5)
T2 = build_transformation(link, 2, kappa=2.0, n_cal=10000)
for mult in (0.5, 1, 2, 4):
    ov = [est.spectral_l2(planted(link, int(mult * d), s), T2).overlap for s in range(10)]
    print(f"m = {mult}d: median overlap {np.median(ov):.2f}")

# %% [markdown]
# ## Norm-stripped data at degree 3

# %%
d = 16
link = NormalizedWrapper(d, inner=GaussianHermite(d, k=3, sigma=0.5))
T3 = csq_transformation(link, 3, n_cal=50000)
print("beta", T3.beta)

# %%
ds = planted(link, 300 * d**2, 1)
cfg = est.EstimatorConfig(algo="sgd", ell=3, beta=T3.beta, trace_every=10000)
res = est.online_sgd(ds, T3, 3, cfg)
print("SGD overlap", res.overlap)
print("trace", np.round(np.asarray(res.trace[0])[::5], 2))

# %%
ds = planted(link, int(20 * d**1.5), 2)
res = est.tensor_unfold(ds, T3, 3, 1, 2)
print("unfolding overlap", res.overlap, "spike", res.info["eigenvalue"])

# %% [markdown]
# ## One boosting step from a weak start

# %%
d = 50
link = NormalizedWrapper(d, inner=GaussianHermite(d, k=3, sigma=0.5))
T3 = csq_transformation(link, 3, n_cal=50000)
w = random_direction(d, stream_rng(3, 0))
u = random_direction(d, stream_rng(3, 1))
u -= (u @ w) * w
u /= np.linalg.norm(u)
v = 0.1 * w + np.sqrt(1 - 0.01) * u
chunk = sample_planted(link, w, 200000, 4)
print("overlap 0.1 ->", abs(est.boost_step(v, chunk, T3, 3) @ w))
