"""Fit the scalar fudge factors used by the estimate checks and print them as JSON.

Calibration seeds (9000+) are disjoint from the seeds used in the test suite.
The frozen output lives in src/nsalpha/data/fitted_constants.json.
"""

import itertools
import json
import math

import numpy as np

from nsalpha.constants import ENVELOPE_BOX, envelope_gap_log10
from nsalpha.filters import (
    FilterProblem,
    IndicatorSpec,
    MollifierSpec,
    solve_filter,
    verify_h2_bound,
    verify_h2_continuous_dependence,
)
from nsalpha.spectral import TorusGrid, physical_transform, random_solenoidal, sobolev_norm

SEEDS = range(9000, 9010)
SAFETY = 2.0


def h2_ratios():
    g = TorusGrid(L=2 * math.pi, N=8)
    out, dep = [], []
    for kappa, (alpha, beta) in itertools.product((2.0, 4.0), [(0.5, 0.3), (1.0, 0.5), (0.25, 0.8)]):
        p = FilterProblem(alpha, IndicatorSpec("smooth_local", beta=beta, c=0.5), MollifierSpec("cutoff", kappa), g)
        for s in SEEDS:
            u = random_solenoidal(g, seed=s, spectrum_slope=-2.0, energy=g.L**3)
            out.append(verify_h2_bound(p, u, solve_filter(p, u)).ratio)
            v = random_solenoidal(g, seed=s + 500, energy=g.L**3)
            dep.append(verify_h2_continuous_dependence(p, u, v).ratio)
    return max(out), max(dep)


def sobolev_grid_constant():
    g = TorusGrid(L=2 * math.pi, N=8)
    r = []
    for s in SEEDS:
        u = random_solenoidal(g, seed=s, spectrum_slope=-2.0)
        r.append(np.abs(physical_transform(u)).max() / sobolev_norm(u, 2, homogeneous=False))
    return max(r)


def envelope_factor():
    corners = itertools.product(ENVELOPE_BOX["alpha"], ENVELOPE_BOX["beta"], ENVELOPE_BOX["f"])
    return max(envelope_gap_log10(a, b, f) for a, b, f in corners)


def fudge(max_ratio):
    # a unit generic constant is kept whenever it already covers the calibration set
    return 1.0 if max_ratio <= 1.0 else float(f"{SAFETY * max_ratio:.3g}")


if __name__ == "__main__":
    h2, h2dep = h2_ratios()
    env = envelope_factor()
    report = {
        "h2_bound": fudge(h2),
        "h2_dependence": fudge(h2dep),
        "dimension_envelope_log10": float(f"{max(env, 0.0) + 1.0:.4g}"),
    }
    print("max ratios: h2=%.3e h2_dep=%.3e envelope_gap_log10=%.3f" % (h2, h2dep, env))
    print("sobolev grid constant (N=8, L=2pi): %.4e" % sobolev_grid_constant())
    print(json.dumps(report, indent=2))
