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
# # Gegenbauer basis and harmonic tensors
#
# Orthonormal Gegenbauer polynomials on the sphere, the Hermite to
# Gegenbauer expansion, and the implicit harmonic tensor operators.

# %%
import numpy as np

from simlab.harmonic_core import (
    GegenbauerBasis,
    beta_moment,
    gegenbauer_eval,
    harmonic_dim,
    hermite_eval,
    hermite_to_gegenbauer,
)
from simlab.harmonic_tensor import HarmonicMatvec, harmonic_tensor_dense, matvec_unfolded, unfold

# %% [markdown]
# ## Orthonormality under the projected-coordinate law

# %%
for d in (3, 10, 100, 1000):
    G = GegenbauerBasis(d, 10).gram()
    print(d, np.abs(G - np.eye(11)).max())

# %%
# Q_l(1) = sqrt(n_{d,l})
d = 20
print([(l, gegenbauer_eval(d, l, 1.0) ** 2, harmonic_dim(d, l)) for l in range(5)])

# %% [markdown]
# ## Hermite polynomials split into radial and angular parts

# %%
d, k = 20, 5
r = np.linspace(0, 3 * np.sqrt(d), 7)
t = np.linspace(-1, 1, 7)
R, T = np.meshgrid(r, t)
lhs = hermite_eval(k, R * T)
rhs = sum(hermite_to_gegenbauer(k, l, d)(R) * gegenbauer_eval(d, l, T) for l in range(k + 1))
print("max abs difference", np.abs(lhs - rhs).max())

# %%
# E[beta_{k,l}^2] decays like d^-(k-l)/2
for d in (100, 400, 1600):
    print(d, [round(beta_moment(k, l, d), 6) for l in range(k + 1)])

# %% [markdown]
# ## Harmonic tensors

# %%
rng = np.random.default_rng(0)
d, ell = 8, 4
z = rng.standard_normal(d)
z /= np.linalg.norm(z)
H = harmonic_tensor_dense(z, ell)
w = rng.standard_normal(d)
w /= np.linalg.norm(w)
c = H
for _ in range(ell):
    c = np.tensordot(c, w, axes=([0], [0]))
print("<H(z), w^4> =", float(c), " Q_4(<w,z>) =", gegenbauer_eval(d, ell, w @ z))
print("trace", np.abs(np.trace(H, axis1=0, axis2=1)).max())

# %%
# the implicit operator never forms the d^l array
op = HarmonicMatvec(z, ell, 1, 3)
v = rng.standard_normal(d**3)
print("matvec vs dense", np.abs(matvec_unfolded(op, v) - unfold(H, 1) @ v).max())
