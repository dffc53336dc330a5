"""Desk-scale parameter sweeps: alpha -> 0, beta -> 1, data perturbations,
absorbing ball, and the mollifier width epsilon -> 0.

Every study runs the same integrator for all parameter points and for its
reference (``problem=None`` for plain Navier-Stokes, A = 1 for Leray-alpha),
so the reported gaps measure modelling error rather than discretisation error.
Trajectories go through ``simulate`` and therefore through the energy ledger.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .constants import ModelParams, compute_chain
from .evolution import ForcingSpec, StepConfig, initial_state, simulate
from .filters import FilterProblem, IndicatorSpec, MollifierSpec
from .spectral import SolenoidalField, TorusGrid, random_solenoidal, sobolev_norm, spectral_transform

STUDY_KINDS = ("alpha_to_zero", "beta_to_one", "continuous_dependence", "absorbing_set", "appendix_epsilon")

# column order is part of the output contract
CSV_COLUMNS = {
    "alpha_to_zero": ("alpha", "ns_gap_linf_l2", "filter_gap_l2_l2"),
    "beta_to_one": ("beta", "one_minus_beta", "gap_energy_norm", "filter_gap_l2_h1"),
    "continuous_dependence": ("delta", "T", "gap_energy_norm", "ratio"),
    "absorbing_set": ("energy_multiple", "t", "energy", "bound"),
    "appendix_epsilon": ("epsilon", "kappa", "gap_l2_l2", "filter_gap_l2_l2"),
}

DEFAULT_TOLERANCES = {
    "alpha_to_zero": {"min_order": 1.0, "monotone_rtol": 1e-12},
    # relative room above C (1 - beta); the default run needs none
    "beta_to_one": {"rel_slack": 0.0},
    "continuous_dependence": {"max_spread": 2.0, "T_fractions": (0.25, 0.5, 1.0)},
    "absorbing_set": {"bound_rtol": 1e-10},
    "appendix_epsilon": {"monotone_rtol": 1e-12},
}

# parameter lists must move toward the limit in this direction
_DIRECTION = {
    "alpha_to_zero": -1,
    "beta_to_one": +1,
    "continuous_dependence": -1,
    "absorbing_set": +1,
    "appendix_epsilon": -1,
}

MIN_POINTS = 3
_DEFAULT = object()
FLOAT_FMT = "{:.17g}"


class StudyAborted(RuntimeError):
    """A parameter point failed; ``partial`` holds the rows finished before it."""

    def __init__(self, partial: "StudyResult", cause: BaseException):
        super().__init__(f"{partial.kind} aborted after {len(partial.rows)} rows: {cause}")
        self.partial = partial
        self.cause = cause


@dataclass(frozen=True)
class Scenario:
    N: int = 16
    L: float = 2 * math.pi
    nu: float = 0.1
    T: float = 0.5
    dt: float = 0.01
    scheme: str = "duhamel_picard"
    picard_max_iter: int = 30
    max_halvings: int = 5
    # initial data: random Gaussian field or a single shear mode sin(m y) e_x
    initial: str = "random"
    seed: int = 1
    energy: float = 1.0  # ||u0||^2 / L^3
    spectrum_slope: float = -1.0
    kmax: float = 4.0
    shear_mode: int = 1
    # steady forcing, zero when forcing_energy == 0
    forcing_seed: int = 2
    forcing_energy: float = 1.0  # ||f||^2 / L^3
    forcing_kmax: float = 2.5
    # filter defaults; the swept parameter overrides one of them
    alpha: float = 0.5
    beta: float = 0.5
    indicator: str = "smooth_local"
    c: float = 1.0
    kappa: float = 3.0
    perturb: str = "data"

    def __post_init__(self):
        if self.initial not in ("random", "shear"):
            raise ValueError(f"initial must be 'random' or 'shear', got {self.initial!r}")
        if self.perturb not in ("data", "forcing"):
            raise ValueError(f"perturb must be 'data' or 'forcing', got {self.perturb!r}")
        if self.T <= 0 or self.dt <= 0:
            raise ValueError("T and dt must be positive")
        n = round(self.T / self.dt)
        if n < 1 or abs(n * self.dt - self.T) > 1e-9 * self.T:
            raise ValueError(f"T={self.T} is not a whole number of steps of dt={self.dt}")
        if self.energy < 0 or self.forcing_energy < 0:
            raise ValueError("energies must be nonnegative")
        TorusGrid(self.L, self.N)

    @property
    def steps(self) -> int:
        return int(round(self.T / self.dt))

    def grid(self) -> TorusGrid:
        return TorusGrid(self.L, self.N)

    def step_config(self) -> StepConfig:
        return StepConfig(dt=self.dt, nu=self.nu, scheme=self.scheme, picard_max_iter=self.picard_max_iter,
                          max_halvings=self.max_halvings)

    def initial_field(self, grid: TorusGrid, energy: Optional[float] = None) -> SolenoidalField:
        e = self.energy * self.L**3 if energy is None else energy
        if self.initial == "shear":
            x = grid.coordinates()
            s = np.stack([np.sin(self.shear_mode * x[1] * 2 * math.pi / self.L), 0 * x[0], 0 * x[0]])
            u = SolenoidalField(grid, spectral_transform(grid, s).coeffs)
        else:
            u = random_solenoidal(grid, self.seed, self.spectrum_slope, kmax=self.kmax)
        return _rescale(u, e)

    def forcing(self, grid: TorusGrid) -> ForcingSpec:
        if self.forcing_energy == 0:
            return ForcingSpec.none(grid)
        f = random_solenoidal(grid, self.forcing_seed, energy=self.forcing_energy * self.L**3, kmax=self.forcing_kmax)
        return ForcingSpec.steady(f)

    def problem(self, grid: TorusGrid, alpha=None, beta=None, kappa=_DEFAULT, indicator=None) -> FilterProblem:
        """Filter problem of the scenario with one field overridden; ``kappa=None`` drops the mollifier."""
        kind = indicator or self.indicator
        b = self.beta if beta is None else beta
        if kind != "constant_one" and b == 1.0:
            kind = "constant_one"  # A_beta = 1 identically
        ind = IndicatorSpec(kind, beta=b, c=self.c)
        k = self.kappa if kappa is _DEFAULT else kappa
        mol = MollifierSpec("none") if k is None else MollifierSpec("cutoff", k)
        return FilterProblem(self.alpha if alpha is None else alpha, ind, mol, grid)


def _rescale(u: SolenoidalField, energy: float) -> SolenoidalField:
    n2 = sobolev_norm(u, 0) ** 2
    if energy == 0 or n2 == 0:
        return SolenoidalField.zeros(u.grid)
    return SolenoidalField.trusted(u.grid, u.coeffs * math.sqrt(energy / n2))


@dataclass(frozen=True)
class StudySpec:
    kind: str
    params: tuple
    scenario: Scenario = field(default_factory=Scenario)
    tolerances: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in STUDY_KINDS:
            raise ValueError(f"unknown study kind {self.kind!r}; expected one of {STUDY_KINDS}")
        params = tuple(float(p) for p in self.params)
        object.__setattr__(self, "params", params)
        d = np.diff(params) * _DIRECTION[self.kind]
        if np.any(d <= 0):
            word = "increasing" if _DIRECTION[self.kind] > 0 else "decreasing"
            raise ValueError(f"{self.kind} parameters must be strictly {word}, got {params}")
        unknown = set(self.tolerances) - set(DEFAULT_TOLERANCES[self.kind])
        if unknown:
            raise ValueError(f"unknown tolerance keys for {self.kind}: {sorted(unknown)}")
        object.__setattr__(self, "tolerances", {**DEFAULT_TOLERANCES[self.kind], **self.tolerances})


@dataclass(frozen=True)
class StudyResult:
    kind: str
    columns: tuple
    rows: tuple
    fitted: dict
    verdict: bool
    notes: str = ""

    def csv_text(self) -> str:
        lines = [",".join(self.columns)]
        lines += [",".join(FLOAT_FMT.format(float(v)) for v in row) for row in self.rows]
        return "\n".join(lines) + "\n"

    def write_csv(self, path) -> None:
        Path(path).write_bytes(self.csv_text().encode("ascii"))

    def verdict_text(self) -> str:
        out = [f"study={self.kind}", f"rows={len(self.rows)}"]
        out += [f"{k}={FLOAT_FMT.format(v)}" for k, v in sorted(self.fitted.items())]
        if self.notes:
            out.append(f"notes={self.notes}")
        out.append(f"verdict={'PASS' if self.verdict else 'FAIL'}")
        return "\n".join(out) + "\n"


def default_spec(kind: str) -> StudySpec:
    """Parameter sweeps and scenarios used by ``study`` when no config is given."""
    if kind == "alpha_to_zero":
        return StudySpec(kind, (0.4, 0.2, 0.1, 0.05), Scenario())
    if kind == "beta_to_one":
        return StudySpec(kind, (0.5, 0.75, 0.875, 0.9375), Scenario())
    if kind == "continuous_dependence":
        return StudySpec(kind, (1e-2, 1e-3, 1e-4), Scenario(T=1.0, dt=0.01))
    if kind == "absorbing_set":
        return StudySpec(kind, (0.0, 1.0, 4.0), Scenario(nu=0.5, T=2.0, dt=0.01, alpha=0.5))
    if kind == "appendix_epsilon":
        sc = Scenario(indicator="global_energy", c=math.sqrt((2 * math.pi) ** 3), kmax=8.0, spectrum_slope=-0.5)
        return StudySpec(kind, (0.5, 0.25, 0.125), sc)
    raise ValueError(f"unknown study kind {kind!r}")


# ---------------------------------------------------------------- trajectories

@dataclass(frozen=True)
class _Trajectory:
    t: np.ndarray
    u: np.ndarray  # (steps+1, 3, N, N, N//2+1)
    ua: np.ndarray


def _run(sc: Scenario, problem, u0: SolenoidalField, forcing: ForcingSpec) -> _Trajectory:
    cfg = sc.step_config()
    ts, us, uas = [], [], []

    def keep(s):
        ts.append(s.t)
        us.append(s.u.coeffs)
        uas.append(s.u_alpha.u_alpha.coeffs)

    s0 = initial_state(u0, problem, forcing, cfg)
    keep(s0)
    simulate(s0, cfg, forcing, problem, steps=sc.steps, callback=keep)
    return _Trajectory(np.array(ts), np.array(us), np.array(uas))


def _sq_norms(grid: TorusGrid, d: np.ndarray, s: int = 0, homogeneous: bool = True) -> np.ndarray:
    """Per-time squared Sobolev norms of a stack of coefficient arrays."""
    if s == 0:
        mult = 1.0
    elif homogeneous:
        mult = grid.k2**s
    else:
        mult = (1.0 + grid.k2) ** s
    w = grid.weights * grid.L**3 * mult
    return np.sum(w * np.abs(d) ** 2, axis=tuple(range(1, d.ndim)))


def _trapz(y: np.ndarray, t: np.ndarray) -> float:
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(t)))


def _linf_l2(grid, d) -> float:
    return float(np.sqrt(_sq_norms(grid, d).max()))


def _l2_l2(grid, d, t) -> float:
    return math.sqrt(_trapz(_sq_norms(grid, d), t))


def _l2_h1(grid, d, t) -> float:
    return math.sqrt(_trapz(_sq_norms(grid, d, 1, homogeneous=False), t))


def _energy_norm(grid, d, t, nu) -> float:
    """sup_t ||d|| + sqrt(nu) (int ||grad d||^2)^(1/2)."""
    return _linf_l2(grid, d) + math.sqrt(nu) * math.sqrt(_trapz(_sq_norms(grid, d, 1), t))


def _fit_order(x: Sequence[float], y: Sequence[float]) -> float:
    x, y = np.asarray(x, float), np.asarray(y, float)
    ok = (x > 0) & (y > 0)
    if ok.sum() < 2:
        return math.nan
    return float(np.polyfit(np.log(x[ok]), np.log(y[ok]), 1)[0])


def _nonincreasing(vals: Sequence[float], rtol: float) -> bool:
    scale = max(max(vals), 0.0)
    return all(b <= a + rtol * scale for a, b in zip(vals, vals[1:]))


def _map_points(fn: Callable, params: Sequence[float], workers: int):
    """Evaluate ``fn`` over the parameter points; returns (results in order, first error)."""
    results, error = [], None
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(fn, p) for p in params]
            for fut in futures:
                try:
                    results.append(fut.result())
                except Exception as exc:
                    error = exc
                    break
    else:
        for p in params:
            try:
                results.append(fn(p))
            except Exception as exc:
                error = exc
                break
    return results, error


def _abort(spec: StudySpec, rows, exc):
    partial = StudyResult(spec.kind, CSV_COLUMNS[spec.kind], tuple(rows), {}, False, f"aborted: {exc}")
    raise StudyAborted(partial, exc) from exc


def _finish(spec: StudySpec, rows, fitted: dict, ok: bool, notes: list) -> StudyResult:
    rows = tuple(tuple(float(v) for v in r) for r in rows)
    # the absorbing-set check is row-wise and needs no fit
    if len(spec.params) < MIN_POINTS and spec.kind != "absorbing_set":
        ok = False
        notes = notes + [f"fewer than {MIN_POINTS} parameter points"]
    return StudyResult(spec.kind, CSV_COLUMNS[spec.kind], rows, fitted, bool(ok), "; ".join(notes))


def _reference(spec: StudySpec, problem, u0, forcing) -> _Trajectory:
    try:
        return _run(spec.scenario, problem, u0, forcing)
    except Exception as exc:
        _abort(spec, [], exc)


# ---------------------------------------------------------------- studies

def run_alpha_to_zero(spec: StudySpec, workers: int = 1) -> StudyResult:
    """Filtered model vs Navier-Stokes as alpha decreases.

    Rows: sup_t ||u_(a) - u_NS|| and ||u_(a),a - u_(a)||_{L2 L2}.  The verdict asks for
    a least-squares order >= ``min_order`` in the filter gap and a nonincreasing NS gap.
    Convergence of the whole computed sequence is checked, which is more than a
    subsequence statement would give.
    """
    sc, tol = spec.scenario, spec.tolerances
    grid = sc.grid()
    u0, forcing = sc.initial_field(grid), sc.forcing(grid)
    ref = _reference(spec, None, u0, forcing)

    def point(a):
        tr = _run(sc, sc.problem(grid, alpha=a), u0, forcing)
        return (a, _linf_l2(grid, tr.u - ref.u), _l2_l2(grid, tr.ua - tr.u, tr.t))

    rows, err = _map_points(point, spec.params, workers)
    if err is not None:
        _abort(spec, rows, err)
    order = _fit_order([r[0] for r in rows], [r[2] for r in rows])
    mono = _nonincreasing([r[1] for r in rows], tol["monotone_rtol"])
    fitted = {"filter_order": order, "ns_gap_order": _fit_order([r[0] for r in rows], [r[1] for r in rows])}
    notes = [] if mono else ["NS gap not monotone"]
    return _finish(spec, rows, fitted, order >= tol["min_order"] and mono, notes)


def run_beta_to_one(spec: StudySpec, workers: int = 1) -> StudyResult:
    """Indicator-weighted model vs Leray-alpha (A = 1) as beta -> 1.

    Both gaps are compared against C (1 - beta), C frozen at the first beta.
    """
    sc, tol = spec.scenario, spec.tolerances
    grid = sc.grid()
    u0, forcing = sc.initial_field(grid), sc.forcing(grid)
    ref = _reference(spec, sc.problem(grid, indicator="constant_one", beta=1.0), u0, forcing)

    def point(b):
        tr = _run(sc, sc.problem(grid, beta=b), u0, forcing)
        return (b, 1.0 - b, _energy_norm(grid, tr.u - ref.u, tr.t, sc.nu), _l2_h1(grid, tr.ua - ref.ua, tr.t))

    rows, err = _map_points(point, spec.params, workers)
    if err is not None:
        _abort(spec, rows, err)
    r0 = rows[0]
    c_gap = r0[2] / r0[1] if r0[1] > 0 else 0.0
    c_filter = r0[3] / r0[1] if r0[1] > 0 else 0.0
    lim = 1.0 + tol["rel_slack"]
    ok = all(r[2] <= c_gap * r[1] * lim and r[3] <= c_filter * r[1] * lim for r in rows[1:])
    fitted = {
        "C_gap": c_gap,
        "C_filter": c_filter,
        "gap_order": _fit_order([r[1] for r in rows], [r[2] for r in rows]),
        "filter_order": _fit_order([r[1] for r in rows], [r[3] for r in rows]),
    }
    return _finish(spec, rows, fitted, ok, [] if ok else ["gap exceeds C (1 - beta)"])


def run_continuous_dependence(spec: StudySpec, workers: int = 1) -> StudyResult:
    """Energy-norm distance of two runs whose data (or forcing) differ by delta.

    ``ratio`` divides by ||u01 - u02|| (data) or sqrt((4/nu) int ||f1 - f2||^2)
    (forcing).  Each delta run is sampled at the horizons T_fractions * T, and the
    growth constant c is the smallest one with ratio^2 <= exp(c sqrt(T)) on all rows.
    """
    sc, tol = spec.scenario, spec.tolerances
    grid = sc.grid()
    u0, forcing = sc.initial_field(grid), sc.forcing(grid)
    prob = sc.problem(grid)
    ref = _reference(spec, prob, u0, forcing)
    direction = random_solenoidal(grid, sc.seed + 1000, sc.spectrum_slope, kmax=sc.kmax)
    horizons = [round(fr * sc.steps) for fr in tol["T_fractions"]]
    if any(h < 1 for h in horizons):
        raise ValueError("T_fractions * T must cover at least one step")

    def point(delta):
        if sc.perturb == "data":
            size = delta * math.sqrt(sc.energy * sc.L**3)
            u1, f1 = u0 + _rescale(direction, size**2), forcing
        else:
            if forcing.kind == "none":
                raise ValueError("forcing perturbation needs nonzero forcing")
            size = delta * forcing.l2
            df = _rescale(direction, size**2)
            u1, f1 = u0, ForcingSpec.steady(SolenoidalField.trusted(grid, forcing.field.coeffs + df.coeffs))
        u1 = SolenoidalField.trusted(grid, u1.coeffs)
        tr = ref if delta == 0 else _run(sc, prob, u1, f1)
        out = []
        for h in horizons:
            t = tr.t[: h + 1]
            gap = _energy_norm(grid, tr.u[: h + 1] - ref.u[: h + 1], t, sc.nu)
            scale = size if sc.perturb == "data" else size * math.sqrt(4.0 * t[-1] / sc.nu)
            out.append((delta, t[-1], gap, gap / scale if scale > 0 else 0.0))
        return out

    chunks, err = _map_points(point, spec.params, workers)
    rows = [r for c in chunks for r in c]
    if err is not None:
        _abort(spec, rows, err)
    live = [r for r in rows if r[0] > 0]
    final = [r[3] for r in live if r[1] == rows[-1][1]]
    spread = max(final) / min(final) if final and min(final) > 0 else math.inf
    logs = [(math.sqrt(r[1]), 2 * math.log(r[3])) for r in live if r[3] > 0]
    growth = max((y / x for x, y in logs), default=math.nan)
    x = np.array([p[0] for p in logs])
    y = np.array([p[1] for p in logs])
    c_ls = float(x @ y / (x @ x)) if len(logs) else math.nan
    fitted = {"ratio_spread": spread, "growth_constant": growth, "growth_constant_lsq": c_ls}
    ok = spread <= tol["max_spread"] and math.isfinite(growth)
    return _finish(spec, rows, fitted, ok, [] if ok else ["ratio not uniform in delta"])


def run_absorbing_set(spec: StudySpec, workers: int = 1) -> StudyResult:
    """Row-wise check of ||u(t)||^2 <= exp(-eta t) ||u0||^2 + R^2 / 2.

    Parameters are multiples m of R^2 for the initial energy (the scenario energy
    when R = 0).  For the largest m the first time with ||u||^2 <= R^2 is compared
    with the analytic entry time ln(2 m) / eta.
    """
    sc, tol = spec.scenario, spec.tolerances
    grid = sc.grid()
    forcing = sc.forcing(grid)
    prob = sc.problem(grid)
    f_hm1 = forcing.hminus1
    chain = compute_chain(ModelParams(alpha=sc.alpha, beta=min(sc.beta, 1.0), nu=sc.nu, L=sc.L, phi_l2=1.0, phi_h1=1.0,
                                      c_a=0.0, c_a_prime=0.0, f_hminus1=f_hm1, u0_l2=1.0, T=sc.T))
    eta, R2 = chain.eta, chain.R2
    base = R2 if R2 > 0 else sc.energy * sc.L**3

    def point(m):
        u0 = sc.initial_field(grid, energy=m * base)
        tr = _run(sc, prob, u0, forcing)
        e = _sq_norms(grid, tr.u)
        bound = np.exp(-eta * tr.t) * e[0] + R2 / 2
        return [(m, t, ei, bi) for t, ei, bi in zip(tr.t, e, bound)]

    chunks, err = _map_points(point, spec.params, workers)
    rows = [r for c in chunks for r in c]
    if err is not None:
        _abort(spec, rows, err)
    bad = [r for r in rows if r[2] > r[3] * (1 + tol["bound_rtol"])]
    m = spec.params[-1]
    inside = [r[1] for r in rows if r[0] == m and r[2] <= R2]
    entry = inside[0] if inside and R2 > 0 else math.nan
    analytic = math.log(2 * m) / eta if (m > 0 and R2 > 0) else math.nan
    ok = not bad
    notes = [f"bound violated at t={bad[0][1]!r}"] if bad else []
    if math.isfinite(analytic) and analytic <= sc.T and not (entry <= analytic + sc.dt):
        ok = False
        notes.append("late entry into the ball")
    fitted = {"eta": eta, "R2": R2, "f_hminus1": f_hm1, "entry_time": entry, "analytic_entry_time": analytic}
    res = _finish(spec, rows, fitted, ok, notes)
    return res


def run_appendix_epsilon(spec: StudySpec, workers: int = 1) -> StudyResult:
    """Global-energy indicator with cutoff mollifier kappa = 1 / epsilon vs no mollifier."""
    sc, tol = spec.scenario, spec.tolerances
    grid = sc.grid()
    u0, forcing = sc.initial_field(grid), sc.forcing(grid)
    ref = _reference(spec, sc.problem(grid, indicator="global_energy", kappa=None), u0, forcing)

    def point(eps):
        kappa = 1.0 / eps
        tr = _run(sc, sc.problem(grid, indicator="global_energy", kappa=kappa), u0, forcing)
        return (eps, kappa, _l2_l2(grid, tr.u - ref.u, tr.t), _l2_l2(grid, tr.ua - ref.ua, tr.t))

    rows, err = _map_points(point, spec.params, workers)
    if err is not None:
        _abort(spec, rows, err)
    rt = tol["monotone_rtol"]
    ok = _nonincreasing([r[2] for r in rows], rt) and _nonincreasing([r[3] for r in rows], rt)
    fitted = {"gap_order": _fit_order([r[0] for r in rows], [r[2] for r in rows])}
    return _finish(spec, rows, fitted, ok, [] if ok else ["gaps not monotone in epsilon"])


_RUNNERS = {
    "alpha_to_zero": run_alpha_to_zero,
    "beta_to_one": run_beta_to_one,
    "continuous_dependence": run_continuous_dependence,
    "absorbing_set": run_absorbing_set,
    "appendix_epsilon": run_appendix_epsilon,
}


def run_study(spec: StudySpec, workers: int = 1) -> StudyResult:
    return _RUNNERS[spec.kind](spec, workers=workers)
