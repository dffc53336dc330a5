# %% [markdown]
# The constant chain behind the long-time estimates.  Most constants overflow
# double precision for realistic inputs, so the dimension bound is carried in
# log10 form.

# %%
import math

import numpy as np

from nsalpha.constants import ModelParams, compute_chain, fractal_dimension_bound, k_alpha_beta

print("K(1, 0.25) =", k_alpha_beta(1.0, 0.25))
alphas = np.array([0.1, 0.2, 0.4, 0.8])
slope = np.polyfit(np.log(alphas), np.log([k_alpha_beta(a, 0.5) for a in alphas]), 1)[0]
print(f"log K vs log alpha slope for alpha <= 1: {slope:.6f}")

# %%
p = ModelParams(alpha=1.0, beta=0.25, nu=1.0, L=2 * math.pi, phi_l2=3.0, phi_h1=5.0,
                c_a=0.5, c_a_prime=1.0, f_hminus1=1.0, u0_l2=1.0, T=1.0)
rep = compute_chain(p)
for key in ("K0", "K3", "K4", "eta", "R2", "T_eta", "log10_m"):
    print(f"{key:8s} {getattr(rep, key):.6g}")

# %% The bound grows with the forcing
for f in (0.1, 1.0, 10.0):
    d = fractal_dimension_bound(ModelParams(**{**p.__dict__, "f_hminus1": f}))
    print(f"||f|| = {f:5g}: log10 D = {d.log10_D:.4g}")
