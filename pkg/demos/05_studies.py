# %% [markdown]
# Parameter sweeps at reduced size (N = 8, short horizon) so this runs in
# seconds.  The full-size versions are in tests/test_acceptance.py and behind
# ``nsalpha study``.

# %%
from nsalpha.experiments import Scenario, StudySpec, run_study

small = Scenario(N=8, T=0.2, dt=0.02, nu=0.2, kmax=2.5, forcing_kmax=2.0)

for kind, params in [
    ("alpha_to_zero", (0.4, 0.2, 0.1, 0.05)),
    ("beta_to_one", (0.5, 0.75, 0.875)),
    ("continuous_dependence", (1e-2, 1e-3, 1e-4)),
    ("absorbing_set", (0.0, 1.0, 4.0)),
]:
    res = run_study(StudySpec(kind, params, small))
    print(res.verdict_text())

# %% CSV output is stable to the byte
res = run_study(StudySpec("alpha_to_zero", (0.4, 0.2, 0.1), small))
print(res.csv_text())
