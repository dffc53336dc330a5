import math
from dataclasses import replace

import numpy as np
import pytest
from scipy.integrate import trapezoid

from nsalpha.constants import ModelParams, compute_chain
from nsalpha.experiments import (
    CSV_COLUMNS,
    STUDY_KINDS,
    Scenario,
    StudyAborted,
    StudySpec,
    default_spec,
    run_study,
)

TWO_PI = 2 * math.pi


def small(**kw):
    base = dict(N=8, T=0.2, dt=0.02, nu=0.2, kmax=2.5, forcing_kmax=2.0)
    base.update(kw)
    return Scenario(**base)


def shear_decay_gap(sc, alpha, m):
    # single shear mode: every model decays like the heat flow, filter = Helmholtz symbol
    k2 = m**2 * (TWO_PI / sc.L) ** 2
    n = int(round(sc.T / sc.dt))
    t = np.linspace(0.0, sc.T, n + 1)
    u0_l2 = math.sqrt(sc.energy * sc.L**3)
    gap = alpha**2 * k2 / (1 + alpha**2 * k2) * u0_l2 * np.exp(-sc.nu * k2 * t)
    return math.sqrt(trapezoid(gap**2, t))


class TestSpec:
    def test_kinds(self):
        assert set(STUDY_KINDS) == set(CSV_COLUMNS)
        for k in STUDY_KINDS:
            assert default_spec(k).kind == k

    def test_monotone_params_required(self):
        with pytest.raises(ValueError):
            StudySpec("alpha_to_zero", (0.1, 0.2, 0.05), small())
        with pytest.raises(ValueError):
            StudySpec("beta_to_one", (0.9, 0.5, 0.75), small())
        with pytest.raises(ValueError):
            StudySpec("appendix_epsilon", (0.125, 0.25, 0.5), small())

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            StudySpec("gamma_to_zero", (1.0, 0.5, 0.25), small())

    def test_unknown_tolerance(self):
        with pytest.raises(ValueError):
            StudySpec("alpha_to_zero", (0.4, 0.2, 0.1), small(), tolerances={"min_ordr": 1.0})

    def test_too_few_points_cannot_pass(self):
        sc = small(initial="shear", indicator="constant_one", forcing_energy=0.0)
        res = run_study(StudySpec("alpha_to_zero", (0.2, 0.1), sc))
        assert not res.verdict
        assert "fewer than 3" in res.notes


class TestAlphaToZero:
    def test_shear_closed_form(self):
        sc = small(initial="shear", shear_mode=2, indicator="constant_one", forcing_energy=0.0, T=0.4)
        alphas = (0.04, 0.02, 0.01, 0.005)
        res = run_study(StudySpec("alpha_to_zero", alphas, sc))
        for row, a in zip(res.rows, alphas):
            assert row[0] == a
            assert row[1] <= 1e-12  # shear solves every model exactly
            assert row[2] == pytest.approx(shear_decay_gap(sc, a, 2), rel=1e-8)
        assert res.fitted["filter_order"] == pytest.approx(2.0, abs=0.01)
        assert res.verdict

    def test_smooth_local_order(self):
        sc = small(T=0.2)
        res = run_study(StudySpec("alpha_to_zero", (0.4, 0.2, 0.1, 0.05), sc))
        assert res.fitted["filter_order"] >= 1.0
        assert res.verdict, res.verdict_text()

    def test_dt_robustness(self):
        sc = small(T=0.2)
        a = run_study(StudySpec("alpha_to_zero", (0.4, 0.2, 0.1), sc))
        b = run_study(StudySpec("alpha_to_zero", (0.4, 0.2, 0.1), replace(sc, dt=sc.dt / 2)))
        for ra, rb in zip(a.rows, b.rows):
            assert ra[2] == pytest.approx(rb[2], rel=5e-3)


class TestBetaToOne:
    def test_beta_one_is_reference(self):
        res = run_study(StudySpec("beta_to_one", (0.5, 0.75, 1.0), small()))
        last = res.rows[-1]
        assert last[2] == 0.0 and last[3] == 0.0

    def test_halving_halves_filter_gap(self):
        res = run_study(StudySpec("beta_to_one", (0.5, 0.75, 0.875), small()))
        gaps = [r[3] for r in res.rows]
        for g0, g1 in zip(gaps, gaps[1:]):
            assert g1 / g0 == pytest.approx(0.5, rel=0.25)
        assert res.verdict, res.verdict_text()


class TestContinuousDependence:
    def test_zero_perturbation_bitwise(self):
        res = run_study(StudySpec("continuous_dependence", (1e-3, 1e-4, 0.0), small()))
        zero = [r for r in res.rows if r[0] == 0.0]
        assert zero and all(r[2] == 0.0 for r in zero)

    def test_linear_stability(self):
        res = run_study(StudySpec("continuous_dependence", (1e-2, 1e-3, 1e-4), small(T=0.4)))
        assert res.fitted["ratio_spread"] <= 2.0
        assert res.fitted["growth_constant"] >= 0.0
        assert res.verdict, res.verdict_text()
        assert sorted({r[1] for r in res.rows}) == [0.1, 0.2, 0.4]

    def test_forcing_perturbation(self):
        res = run_study(StudySpec("continuous_dependence", (1e-2, 1e-3, 1e-4), small(T=0.4, perturb="forcing")))
        assert res.fitted["ratio_spread"] <= 2.0
        assert all(math.isfinite(r[3]) for r in res.rows)


class TestAbsorbingSet:
    def _r2(self, sc, res):
        return res.fitted["R2"]

    def test_zero_initial_data(self):
        res = run_study(StudySpec("absorbing_set", (0.0, 1.0, 4.0), small()))
        r2 = res.fitted["R2"]
        for row in res.rows:
            if row[0] == 0.0:
                assert row[2] <= r2 / 2
        assert res.verdict

    def test_unforced_pure_exponential(self):
        sc = small(forcing_energy=0.0, nu=1.0, T=0.4)
        res = run_study(StudySpec("absorbing_set", (1.0, 2.0, 4.0), sc))
        assert res.fitted["R2"] == 0.0
        eta = 4 * math.pi**2 * sc.nu / sc.L**2
        e0 = sc.energy * sc.L**3
        for m, t, energy, bound in res.rows:
            assert bound == pytest.approx(math.exp(-eta * t) * m * e0, rel=1e-12)
            assert energy <= bound
        assert res.verdict

    def test_entry_time(self):
        # nu = 1, L = 2 pi gives eta = 1, so the analytic entry time for 4 R^2 is ln 8
        sc = small(nu=1.0, T=2.5, dt=0.05)
        res = run_study(StudySpec("absorbing_set", (4.0,), sc))
        assert res.fitted["analytic_entry_time"] == pytest.approx(math.log(8.0))
        assert res.fitted["entry_time"] <= math.log(8.0)
        assert res.verdict

    def test_r2_matches_constants(self):
        sc = small()
        res = run_study(StudySpec("absorbing_set", (4.0,), sc))
        f_hm1 = res.fitted["f_hminus1"]
        p = ModelParams(alpha=sc.alpha, beta=sc.beta, nu=sc.nu, L=sc.L, phi_l2=1.0, phi_h1=1.0, c_a=0.0,
                        c_a_prime=0.0, f_hminus1=f_hm1, u0_l2=1.0, T=sc.T)
        assert res.fitted["R2"] == pytest.approx(compute_chain(p).R2, rel=1e-14)


class TestEpsilonSweep:
    def test_constant_indicator_limit(self):
        sc = small(indicator="global_energy", c=1e12)
        res = run_study(StudySpec("appendix_epsilon", (0.5, 0.25, 0.125), sc))
        assert all(r[2] == 0.0 and r[3] == 0.0 for r in res.rows)

    def test_band_limited_shear(self):
        sc = small(indicator="global_energy", c=20.0, initial="shear", shear_mode=2, forcing_energy=0.0)
        res = run_study(StudySpec("appendix_epsilon", (0.5, 0.25, 0.125), sc))
        assert all(r[2] == 0.0 and r[3] == 0.0 for r in res.rows)

    def test_broadband_monotone(self):
        spec = default_spec("appendix_epsilon")
        spec = replace(spec, scenario=replace(spec.scenario, T=0.1))
        res = run_study(spec)
        gaps = [r[2] for r in res.rows]
        assert gaps[0] > 0
        assert all(b <= a for a, b in zip(gaps, gaps[1:]))
        assert res.verdict, res.verdict_text()


class TestOutput:
    def test_csv_schema_and_digits(self):
        sc = small(initial="shear", indicator="constant_one", forcing_energy=0.0)
        res = run_study(StudySpec("alpha_to_zero", (0.4, 0.2, 0.1), sc))
        lines = res.csv_text().splitlines()
        assert lines[0] == ",".join(CSV_COLUMNS["alpha_to_zero"])
        assert len(lines) == 4
        first = lines[1].split(",")
        assert float(first[0]) == 0.4
        assert all(float(x) == v for x, v in zip(first, res.rows[0]))

    def test_verdict_text(self):
        sc = small(initial="shear", indicator="constant_one", forcing_energy=0.0)
        res = run_study(StudySpec("alpha_to_zero", (0.4, 0.2, 0.1), sc))
        text = res.verdict_text()
        assert text.splitlines()[0] == "study=alpha_to_zero"
        assert "verdict=PASS" in text

    @pytest.mark.parametrize("kind", ["alpha_to_zero", "continuous_dependence"])
    def test_deterministic_bytes(self, kind, tmp_path):
        params = {"alpha_to_zero": (0.4, 0.2, 0.1), "continuous_dependence": (1e-2, 1e-3, 1e-4)}[kind]
        spec = StudySpec(kind, params, small(T=0.1))
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        run_study(spec).write_csv(a)
        run_study(spec, workers=2).write_csv(b)
        assert a.read_bytes() == b.read_bytes()

    def test_abort_keeps_partial_rows(self):
        # a huge initial energy with one Picard iterate and no halving cannot contract
        sc = small(energy=1e4, picard_max_iter=1, max_halvings=0, dt=0.1)
        with pytest.raises(StudyAborted) as info:
            run_study(StudySpec("alpha_to_zero", (0.4, 0.2, 0.1), sc))
        assert not info.value.partial.verdict
        assert len(info.value.partial.rows) < 3
