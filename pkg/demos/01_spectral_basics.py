# %% [markdown]
# Fields on the periodic box live as half-spectrum Fourier coefficients.
# This script builds a random solenoidal field, checks that the Leray projection
# really removes divergence, and looks at a few Sobolev norms.

# %%
import math

import numpy as np

from nsalpha.spectral import (
    TorusGrid,
    leray_project,
    physical_transform,
    random_solenoidal,
    sobolev_norm,
    spectral_transform,
)

grid = TorusGrid(L=2 * math.pi, N=16)
print("grid:", grid.N, "modes per axis, dealiased up to |z_i| <=", grid.zmax)

# %% A random field is divergence-free to round-off
u = random_solenoidal(grid, seed=0, energy=grid.L**3)
print("max |k . u_hat| =", u.max_divergence())

# %% Projecting a gradient field leaves nothing behind
x = grid.coordinates()
grad = np.stack([np.cos(x[0]) * np.cos(2 * x[1]), -2 * np.sin(x[0]) * np.sin(2 * x[1]), 0 * x[2]])
print("|P grad phi| =", sobolev_norm(leray_project(spectral_transform(grid, grad)), 0))

# %% Norms: Poincare says ||u||_{H1} >= (2 pi / L) ||u||
for s in (-1, 0, 1, 2):
    print(f"||u||_H^{s} = {sobolev_norm(u, s):.6g}")

# %% Back to physical space and mean kinetic energy per unit volume
U = physical_transform(u)
print("mean |u|^2 =", float(np.mean(np.sum(U**2, axis=0))))
