"""Time integration of the filtered model in mild (Duhamel) form.

Each slab [t, t + dt] is advanced by a fixed-point iteration of

    u(t + dt) = E u(t) + dt/2 * (E g(t) + g(t + dt)),   E = exp(nu dt Laplacian),
    g = f - P div(u (x) u_alpha),

re-solving the filter at every iterate.  ``problem=None`` switches the filter
off (u_alpha := u), which gives the plain Navier-Stokes reference.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field as dc_field, replace
from functools import cached_property
from typing import Callable, Optional

import numpy as np

from .filters import FilterProblem, FilterSolution, solve_filter
from .spectral import (
    SolenoidalField,
    SpectralField,
    TorusGrid,
    _project_array,
    sobolev_norm,
    to_physical,
    to_spectral,
)

log = logging.getLogger(__name__)

SCHEMES = ("duhamel_picard", "imex_cn")


class ContractionError(RuntimeError):
    def __init__(self, ratio: float, iterations: int, dt: float):
        super().__init__(
            f"Picard iteration failed to contract (ratio={ratio:.3g} after {iterations} iterates, dt={dt:g}); "
            "reduce dt"
        )
        self.ratio = ratio
        self.iterations = iterations
        self.dt = dt


class EnergyInequalityError(RuntimeError):
    def __init__(self, row):
        super().__init__(f"energy inequality violated at t={row.t:.6g}: slack={row.slack:.3e} < -{row.allowance:.3e}")
        self.row = row


class CFLWarning(UserWarning):
    pass


# ---------------------------------------------------------------- forcing

@dataclass(frozen=True)
class ForcingSpec:
    kind: str
    field: Optional[SolenoidalField] = None
    func: Optional[Callable[[float], SolenoidalField]] = None
    grid: Optional[TorusGrid] = None

    def __post_init__(self):
        if self.kind == "steady_spectral":
            if not isinstance(self.field, SolenoidalField):
                raise ValueError("steady forcing needs a SolenoidalField")
            object.__setattr__(self, "grid", self.field.grid)
        elif self.kind == "time_varying_callable":
            if self.func is None or self.grid is None:
                raise ValueError("time-varying forcing needs a callable and a grid")
        elif self.kind == "none":
            if self.grid is None:
                raise ValueError("zero forcing needs a grid")
        else:
            raise ValueError(f"unknown forcing kind {self.kind!r}")

    @classmethod
    def none(cls, grid: TorusGrid) -> "ForcingSpec":
        return cls("none", grid=grid)

    @classmethod
    def steady(cls, f: SolenoidalField) -> "ForcingSpec":
        return cls("steady_spectral", field=f)

    @classmethod
    def time_varying(cls, func: Callable[[float], SolenoidalField], grid: TorusGrid) -> "ForcingSpec":
        return cls("time_varying_callable", func=func, grid=grid)

    @cached_property
    def _zeros(self) -> np.ndarray:
        return np.zeros((3,) + self.grid.spectral_shape, complex)

    def coeffs_at(self, t: float) -> np.ndarray:
        if self.kind == "steady_spectral":
            return self.field.coeffs
        if self.kind == "none":
            return self._zeros
        f = self.func(t)
        self.grid.check_same(f.grid)
        return f.coeffs

    @cached_property
    def hminus1(self) -> float:
        """||f||_{H^-1} (at t = 0 for time-varying forcing)."""
        if self.kind == "none":
            return 0.0
        f = self.field if self.kind == "steady_spectral" else self.func(0.0)
        return sobolev_norm(f, -1)

    @cached_property
    def l2(self) -> float:
        if self.kind == "none":
            return 0.0
        f = self.field if self.kind == "steady_spectral" else self.func(0.0)
        return sobolev_norm(f, 0)


# ---------------------------------------------------------------- ledger

@dataclass(frozen=True)
class LedgerRow:
    t: float
    energy: float
    dissipation: float
    work: float
    slack: float
    allowance: float


ENERGY_REL_FLOOR = 1e-6
ALLOWANCE_SAFETY = 4.0


@dataclass(frozen=True)
class EnergyLedger:
    rows: tuple
    e0: float

    @classmethod
    def start(cls, e0: float, t0: float) -> "EnergyLedger":
        return cls((LedgerRow(t0, e0, 0.0, 0.0, 0.0, ENERGY_REL_FLOOR * e0),), e0)

    def append(self, row: LedgerRow) -> "EnergyLedger":
        if row.slack < -row.allowance:
            raise EnergyInequalityError(row)
        return EnergyLedger(self.rows + (row,), self.e0)

    @property
    def last(self) -> LedgerRow:
        return self.rows[-1]

    def equality_drift(self) -> float:
        """Largest |slack| relative to the initial energy (the continuum law is an equality)."""
        return max(abs(r.slack) for r in self.rows) / max(self.e0, 1e-300)


# ---------------------------------------------------------------- state

@dataclass(frozen=True)
class StepConfig:
    dt: float
    nu: float = 1.0
    picard_tol: float = 1e-12
    picard_max_iter: int = 30
    scheme: str = "duhamel_picard"
    filter_tol: float = 1e-10
    max_halvings: int = 5

    def __post_init__(self):
        if not (self.dt > 0):
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not (self.nu > 0):
            raise ValueError(f"nu must be positive, got {self.nu}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if self.picard_tol <= 0 or self.picard_max_iter < 1:
            raise ValueError("picard_tol must be positive and picard_max_iter >= 1")


@dataclass(frozen=True)
class SimState:
    t: float
    u: SolenoidalField
    u_alpha: FilterSolution
    ledger: EnergyLedger
    g: np.ndarray = dc_field(repr=False)  # f - N(u, u_alpha) at time t
    g_prev: Optional[np.ndarray] = dc_field(default=None, repr=False)  # previous step, for AB2
    dt_prev: Optional[float] = None


# ---------------------------------------------------------------- operators

def heat_semigroup(v: SpectralField, tau: float, nu: float) -> SpectralField:
    if tau < 0:
        raise ValueError("heat semigroup needs tau >= 0")
    out = v.coeffs * np.exp(-nu * v.grid.k2 * tau)
    if isinstance(v, SolenoidalField):
        return SolenoidalField.trusted(v.grid, out)
    return SpectralField(v.grid, out)


def _flux_div(grid: TorusGrid, u: np.ndarray, ua: np.ndarray) -> np.ndarray:
    """Dealiased div(u (x) u_a) before projection."""
    U = to_physical(grid, u)
    UA = to_physical(grid, ua)
    T = to_spectral(grid, U[:, None] * UA[None, :]) * grid.dealias_mask
    return sum(1j * grid.kvec[j] * T[:, j] for j in range(3))


def _nonlinear(grid: TorusGrid, u: np.ndarray, ua: np.ndarray) -> np.ndarray:
    return _project_array(grid, _flux_div(grid, u, ua))


def nonlinear_term(u: SolenoidalField, u_alpha: SolenoidalField) -> SolenoidalField:
    u.grid.check_same(u_alpha.grid)
    return SolenoidalField.trusted(u.grid, _nonlinear(u.grid, u.coeffs, u_alpha.coeffs))


def _filter(problem, u: SolenoidalField, cfg: StepConfig, x0=None) -> FilterSolution:
    if problem is None:
        return FilterSolution(u, 0, 0.0, None)
    return solve_filter(problem, u, tol=cfg.filter_tol, x0=x0)


def _rates(grid: TorusGrid, u: np.ndarray, g: np.ndarray, f: np.ndarray, nu: float):
    """Dissipation rate 2 nu ||u||_{H1}^2, work rate 2 <f, u>, and their time derivatives."""
    w = grid.weights * grid.L**3
    dudt = -nu * grid.k2 * u + g
    D = 2 * nu * np.sum(w * grid.k2 * np.abs(u) ** 2)
    W = 2 * np.sum(w * np.real(f * np.conj(u)))
    dD = 4 * nu * np.sum(w * grid.k2 * np.real(np.conj(u) * dudt))
    dW = 2 * np.sum(w * np.real(f * np.conj(dudt)))
    return float(D), float(W), float(dD), float(dW)


def initial_state(u0: SolenoidalField, problem: Optional[FilterProblem], forcing: ForcingSpec, cfg: StepConfig, t0: float = 0.0) -> SimState:
    if problem is not None:
        problem.grid.check_same(u0.grid)
    u0 = SolenoidalField.trusted(u0.grid, u0.coeffs * u0.grid.dealias_mask)
    sol = _filter(problem, u0, cfg)
    g = forcing.coeffs_at(t0) - _nonlinear(u0.grid, u0.coeffs, sol.u_alpha.coeffs)
    e0 = sobolev_norm(u0, 0) ** 2
    return SimState(t0, u0, sol, EnergyLedger.start(e0, t0), g)


def update_energy_ledger(prev: SimState, nxt: SimState, forcing: ForcingSpec, nu: float) -> LedgerRow:
    """Trapezoid quadrature of the dissipation and work integrals over one step.

    The allowance is the absolute floor 1e-6 ||u0||^2 plus a per-step O(dt^3)
    estimate, inflated by ALLOWANCE_SAFETY, made of two measured pieces:
      * trapezoid error of the dissipation/work integrals, dt^2/12 |Delta(D' - W')|;
      * the trapezoid energy defect dt/2 |<g1 - E g0, u1 - E u0>|, which is the
        exact energy error of the trapezoid rule for an energy-neutral drift.
    """
    grid = nxt.u.grid
    dt = nxt.t - prev.t
    f0 = forcing.coeffs_at(prev.t)
    f1 = forcing.coeffs_at(nxt.t)
    D0, W0, dD0, dW0 = _rates(grid, prev.u.coeffs, prev.g, f0, nu)
    D1, W1, dD1, dW1 = _rates(grid, nxt.u.coeffs, nxt.g, f1, nu)
    last = prev.ledger.last
    diss = last.dissipation + 0.5 * dt * (D0 + D1)
    work = last.work + 0.5 * dt * (W0 + W1)
    energy = sobolev_norm(nxt.u, 0) ** 2
    slack = prev.ledger.e0 + work - energy - diss
    curvature = dt**2 / 12.0 * abs((dD1 - dW1) - (dD0 - dW0))
    E = np.exp(-nu * grid.k2 * dt)
    w = grid.weights * grid.L**3
    du = nxt.u.coeffs - E * prev.u.coeffs
    dg = nxt.g - E * prev.g
    defect = 0.5 * dt * abs(float(np.sum(w * np.real(np.conj(du) * dg))))
    allowance = last.allowance + ALLOWANCE_SAFETY * (curvature + defect)
    return LedgerRow(nxt.t, energy, diss, work, slack, allowance)


def _slab_norm(grid: TorusGrid, d: np.ndarray, nu: float, dt: float) -> float:
    """E-norm of an endpoint increment on a slab: sup L2 + sqrt(nu) (trapezoid L2 H1)."""
    w = grid.weights * grid.L**3
    a2 = np.abs(d) ** 2
    l2 = math.sqrt(float(np.sum(w * a2)))
    h1 = math.sqrt(float(np.sum(w * grid.k2 * a2)))
    return l2 + math.sqrt(nu) * math.sqrt(0.5 * dt) * h1


def _advance_picard(state: SimState, cfg: StepConfig, dt: float, forcing: ForcingSpec, problem) -> SimState:
    grid = state.u.grid
    E = np.exp(-cfg.nu * grid.k2 * dt)
    t1 = state.t + dt
    f1 = forcing.coeffs_at(t1)
    base = E * (state.u.coeffs + 0.5 * dt * state.g)
    v = E * (state.u.coeffs + dt * state.g)  # exponential Euler predictor
    sol = state.u_alpha
    prev_diff = None
    worst = 0.0
    for it in range(1, cfg.picard_max_iter + 1):
        vf = SolenoidalField.trusted(grid, v)
        sol = _filter(problem, vf, cfg, x0=sol.u_alpha if problem is not None else None)
        g1 = f1 - _nonlinear(grid, v, sol.u_alpha.coeffs)
        v_new = base + 0.5 * dt * g1
        diff = _slab_norm(grid, v_new - v, cfg.nu, dt)
        scale = _slab_norm(grid, v_new, cfg.nu, dt)
        v = v_new
        if prev_diff is not None and prev_diff > 0:
            ratio = diff / prev_diff
            worst = max(worst, ratio)
            if ratio >= 1.0 and it >= 3 and diff > cfg.picard_tol * scale:
                raise ContractionError(ratio, it, dt)
        if diff <= cfg.picard_tol * max(scale, 1e-300):
            break
        prev_diff = diff
    else:
        raise ContractionError(worst if worst > 0 else math.inf, cfg.picard_max_iter, dt)
    u1 = SolenoidalField.trusted(grid, v)
    sol = _filter(problem, u1, cfg, x0=sol.u_alpha if problem is not None else None)
    g1 = f1 - _nonlinear(grid, v, sol.u_alpha.coeffs)
    nxt = SimState(t1, u1, sol, state.ledger, g1, state.g, dt)
    row = update_energy_ledger(state, nxt, forcing, cfg.nu)
    return replace(nxt, ledger=state.ledger.append(row))


def _with_halving(advance, state, cfg, dt, forcing, problem, depth=0):
    try:
        return advance(state, cfg, dt, forcing, problem)
    except ContractionError as err:
        if depth >= cfg.max_halvings:
            raise
        log.info("contraction failed at dt=%g (ratio %.3g); halving", dt, err.ratio)
        half = _with_halving(advance, state, cfg, dt / 2, forcing, problem, depth + 1)
        return _with_halving(advance, half, cfg, dt / 2, forcing, problem, depth + 1)


def step_duhamel_picard(state: SimState, cfg: StepConfig, forcing: ForcingSpec, problem: Optional[FilterProblem]) -> SimState:
    return _with_halving(_advance_picard, state, cfg, cfg.dt, forcing, problem)


def _advance_imex(state: SimState, cfg: StepConfig, dt: float, forcing: ForcingSpec, problem) -> SimState:
    if state.g_prev is None or state.dt_prev is None or abs(state.dt_prev - dt) > 1e-14 * dt:
        return _with_halving(_advance_picard, state, cfg, dt, forcing, problem)
    grid = state.u.grid
    umax = float(np.sqrt(np.sum(to_physical(grid, state.u.coeffs) ** 2, axis=0)).max())
    cfl = dt * umax * grid.N / grid.L
    if cfl > 0.5:
        warnings.warn(f"CFL number {cfl:.3g} exceeds 0.5", CFLWarning, stacklevel=3)
    half = 0.5 * cfg.nu * dt * grid.k2
    v = ((1 - half) * state.u.coeffs + dt * (1.5 * state.g - 0.5 * state.g_prev)) / (1 + half)
    u1 = SolenoidalField.trusted(grid, v * grid.dealias_mask)
    t1 = state.t + dt
    sol = _filter(problem, u1, cfg, x0=state.u_alpha.u_alpha if problem is not None else None)
    g1 = forcing.coeffs_at(t1) - _nonlinear(grid, u1.coeffs, sol.u_alpha.coeffs)
    nxt = SimState(t1, u1, sol, state.ledger, g1, state.g, dt)
    row = update_energy_ledger(state, nxt, forcing, cfg.nu)
    return replace(nxt, ledger=state.ledger.append(row))


def step_imex_cn(state: SimState, cfg: StepConfig, forcing: ForcingSpec, problem: Optional[FilterProblem]) -> SimState:
    return _advance_imex(state, cfg, cfg.dt, forcing, problem)


def step(state, cfg, forcing, problem) -> SimState:
    if cfg.scheme == "imex_cn":
        return step_imex_cn(state, cfg, forcing, problem)
    return step_duhamel_picard(state, cfg, forcing, problem)


def simulate(
    state: SimState,
    cfg: StepConfig,
    forcing: ForcingSpec,
    problem: Optional[FilterProblem],
    T: Optional[float] = None,
    steps: Optional[int] = None,
    keep_states: bool = False,
    callback: Optional[Callable[[SimState], None]] = None,
):
    """Advance ``steps`` steps (or up to time ``T``); returns the final state or the trajectory."""
    if (T is None) == (steps is None):
        raise ValueError("give exactly one of T or steps")
    if steps is None:
        steps = int(round((T - state.t) / cfg.dt))
        if steps < 0 or abs(state.t + steps * cfg.dt - T) > 1e-9 * max(1.0, T):
            raise ValueError(f"T={T} is not a whole number of steps of dt={cfg.dt}")
    traj = [state] if keep_states else None
    t0 = state.t
    for n in range(steps):
        state = step(state, cfg, forcing, problem)
        # re-anchor the clock to avoid drift from repeated addition
        state = replace(state, t=t0 + (n + 1) * cfg.dt)
        if keep_states:
            traj.append(state)
        if callback is not None:
            callback(state)
    return traj if keep_states else state


def recover_pressure(state: SimState, forcing: ForcingSpec, problem: Optional[FilterProblem]) -> SpectralField:
    """Scalar P with -grad P = (I - P)((u_a . grad) u - f)."""
    grid = state.u.grid
    ua = state.u_alpha.u_alpha.coeffs
    raw = _flux_div(grid, state.u.coeffs, ua) - forcing.coeffs_at(state.t)
    g = raw - _project_array(grid, raw)
    kdotg = sum(grid.kvec[j] * g[j] for j in range(3))
    return SpectralField(grid, 1j * kdotg * grid.inv_k2)
