"""Nonlinear Helmholtz-type filter: -alpha^2 div(A(phi*u) grad u_a) + u_a = u, div u_a = 0.

The operator is applied matrix-free on the dealiased solenoidal subspace and
inverted by preconditioned conjugate gradients.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np

from .spectral import (
    SolenoidalField,
    SpectralField,
    TorusGrid,
    _project_array,
    convolve,
    sobolev_norm,
    to_physical,
    to_spectral,
)

INDICATOR_KINDS = ("constant_one", "smooth_local", "global_energy")
MOLLIFIER_KINDS = ("cutoff", "none")


class FilterConvergenceError(RuntimeError):
    def __init__(self, message, residual, iterations):
        super().__init__(f"{message} (residual={residual:.3e}, iterations={iterations})")
        self.residual = residual
        self.iterations = iterations


@lru_cache(maxsize=None)
def fitted_constants() -> dict:
    """Fudge factors frozen by ``scripts/calibrate.py`` (see README)."""
    text = resources.files("nsalpha").joinpath("data/fitted_constants.json").read_text()
    return json.loads(text)


@dataclass(frozen=True)
class IndicatorSpec:
    kind: str
    beta: float = 1.0
    c: float = 1.0

    def __post_init__(self):
        if self.kind not in INDICATOR_KINDS:
            raise ValueError(f"unknown indicator kind {self.kind!r}; expected one of {INDICATOR_KINDS}")
        if self.kind == "constant_one":
            if not (0 < self.beta <= 1):
                raise ValueError(f"beta must lie in (0, 1], got {self.beta}")
        elif not (0 < self.beta < 1):
            raise ValueError(f"beta must lie in (0, 1), got {self.beta}")
        if not (self.c > 0):
            raise ValueError(f"shape parameter c must be positive, got {self.c}")

    @property
    def lower_bound(self) -> float:
        return 1.0 if self.kind == "constant_one" else self.beta

    @property
    def C_A(self) -> float:
        """Lipschitz constant of A (w.r.t. |v| locally, ||g||_{L2} globally)."""
        if self.kind == "constant_one":
            return 0.0
        # sup_s 2 s e^{-s^2} / c is attained at s = 1/sqrt(2)
        return (1.0 - self.beta) * math.sqrt(2.0) * math.exp(-0.5) / self.c

    @property
    def C_A_prime(self) -> float:
        """Lipschitz constant of grad A; the Hessian norm peaks at v = 0."""
        if self.kind == "constant_one":
            return 0.0
        if self.kind == "global_energy":
            return math.inf
        return 2.0 * (1.0 - self.beta) / self.c**2

    def evaluate_local(self, v_samples: np.ndarray) -> np.ndarray:
        s = np.sum(v_samples**2, axis=0) / self.c**2
        return self.beta + (1.0 - self.beta) * np.exp(-s)

    def evaluate_global(self, l2: float) -> float:
        return self.beta + (1.0 - self.beta) * math.exp(-(l2**2) / self.c**2)


@dataclass(frozen=True)
class MollifierSpec:
    kind: str
    kappa: float = math.inf

    def __post_init__(self):
        if self.kind not in MOLLIFIER_KINDS:
            raise ValueError(f"unknown mollifier kind {self.kind!r}")
        if self.kind == "cutoff" and not (self.kappa >= 0):
            raise ValueError(f"cutoff kappa must be >= 0, got {self.kappa}")

    def symbol(self, grid: TorusGrid) -> np.ndarray | float:
        if self.kind == "none" or math.isinf(self.kappa):
            return 1.0
        return (grid.kmag <= self.kappa * (1 + 1e-12)).astype(float)

    def _lattice(self, L: float) -> np.ndarray:
        if self.kind == "none" or math.isinf(self.kappa):
            raise ValueError("phi norms are finite only for a finite cutoff")
        r = int(math.floor(self.kappa * L / (2 * math.pi))) + 1
        z = np.arange(-r, r + 1)
        zz = z[:, None, None] ** 2 + z[None, :, None] ** 2 + z[None, None, :] ** 2
        k2 = zz.ravel() * (2 * math.pi / L) ** 2
        return k2[k2 <= self.kappa**2 * (1 + 1e-12)]

    def lattice_count(self, L: float) -> int:
        return int(self._lattice(L).size)

    def l2_norm(self, L: float) -> float:
        # phi_hat_k = 1 on |k| <= kappa, norm taken with the L^3-weighted Parseval sum
        return math.sqrt(L**3 * self._lattice(L).size)

    def h1_norm(self, L: float) -> float:
        return math.sqrt(L**3 * float(np.sum(1.0 + self._lattice(L))))


@dataclass(frozen=True)
class FilterProblem:
    alpha: float
    indicator: IndicatorSpec
    mollifier: MollifierSpec
    grid: TorusGrid

    def __post_init__(self):
        if not (self.alpha > 0):
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.mollifier.kind == "none" and self.indicator.kind == "smooth_local":
            raise ValueError(
                "mollifier 'none' (unregularised mode) requires the global_energy indicator; "
                "smooth_local needs a cutoff mollifier for uniqueness"
            )

    @property
    def coercivity(self) -> float:
        return min(self.alpha**2 * self.indicator.lower_bound, 1.0)


@dataclass(frozen=True)
class FilterSolution:
    u_alpha: SolenoidalField
    iterations: int
    residual: float
    coefficient_field: np.ndarray | None


def coefficient_field(problem: FilterProblem, u: SpectralField) -> np.ndarray:
    problem.grid.check_same(u.grid)
    ind = problem.indicator
    shape = problem.grid.physical_shape
    if ind.kind == "constant_one":
        return np.ones(shape)
    smoothed = convolve(problem.mollifier, u)
    if ind.kind == "global_energy":
        return np.full(shape, ind.evaluate_global(sobolev_norm(smoothed, 0)))
    A = ind.evaluate_local(to_physical(problem.grid, smoothed.coeffs))
    if A.min() < ind.beta - 1e-14 or A.max() > 1 + 1e-14:
        raise FloatingPointError("indicator left [beta, 1]")
    return A


def _is_constant(A) -> bool:
    return np.ndim(A) == 0 or float(np.ptp(A)) == 0.0


def _op_array(grid: TorusGrid, alpha: float, A: np.ndarray, w: np.ndarray) -> np.ndarray:
    mask = grid.dealias_mask
    if _is_constant(A):
        a = float(np.ravel(A)[0])
        return (1.0 + alpha**2 * a * grid.k2) * w * mask
    grad = np.stack([1j * k * w for k in grid.kvec], axis=1)
    flux = to_spectral(grid, A * to_physical(grid, grad)) * mask
    div = sum(1j * grid.kvec[j] * flux[:, j] for j in range(3))
    return _project_array(grid, w - alpha**2 * div) * mask


def apply_filter_operator(problem: FilterProblem, coefficient, w: SpectralField) -> SolenoidalField:
    problem.grid.check_same(w.grid)
    return SolenoidalField(w.grid, _op_array(problem.grid, problem.alpha, np.asarray(coefficient), w.coeffs))


def _dot(grid, a, b) -> float:
    return float(grid.L**3 * np.sum(grid.weights * np.real(a * np.conj(b))))


def solve_filter(
    problem: FilterProblem,
    u: SolenoidalField,
    tol: float = 1e-10,
    max_iter: int | None = None,
    x0: SolenoidalField | None = None,
    coefficient: np.ndarray | None = None,
) -> FilterSolution:
    grid = problem.grid
    grid.check_same(u.grid)
    if not tol > 0:
        raise ValueError("tol must be positive")
    if max_iter is None:
        max_iter = 10 * grid.N**3
    A = coefficient_field(problem, u) if coefficient is None else coefficient
    alpha = problem.alpha
    b = u.coeffs * grid.dealias_mask
    unorm = math.sqrt(max(_dot(grid, u.coeffs, u.coeffs), 0.0))
    target = tol * unorm
    precond = 1.0 / (1.0 + alpha**2 * float(np.mean(A)) * grid.k2)

    if unorm == 0.0:
        return FilterSolution(SolenoidalField.zeros(grid), 0, 0.0, A)

    x = np.zeros_like(b) if x0 is None else x0.coeffs * grid.dealias_mask
    r = b - _op_array(grid, alpha, A, x) if x0 is not None else b.copy()
    rnorm = math.sqrt(_dot(grid, r, r))
    it = 0
    if rnorm > target:
        z = precond * r
        p = z.copy()
        rz = _dot(grid, r, z)
        while True:
            Ap = _op_array(grid, alpha, A, p)
            step = rz / _dot(grid, p, Ap)
            x = x + step * p
            r = r - step * Ap
            it += 1
            rnorm = math.sqrt(_dot(grid, r, r))
            if rnorm <= target:
                break
            if it >= max_iter:
                raise FilterConvergenceError("filter CG did not converge", rnorm, it)
            z = precond * r
            rz_new = _dot(grid, r, z)
            p = z + (rz_new / rz) * p
            rz = rz_new
        # recompute the true residual to guard against drift of the recursion
        true_r = b - _op_array(grid, alpha, A, x)
        rnorm = math.sqrt(_dot(grid, true_r, true_r))
        if rnorm > target:
            if it >= max_iter:
                raise FilterConvergenceError("filter CG drifted", rnorm, it)
            more = solve_filter(problem, u, tol, max_iter - it, SolenoidalField(grid, _project_array(grid, x)), A)
            return FilterSolution(more.u_alpha, it + more.iterations, more.residual, A)
    x = _project_array(grid, x) * grid.dealias_mask
    return FilterSolution(SolenoidalField(grid, x), it, rnorm, A)


# ---------------------------------------------------------------- estimates

@dataclass(frozen=True)
class BoundReport:
    measured: float
    bound: float
    explicit: float
    fudge: float
    violated: bool

    @property
    def ratio(self) -> float:
        return self.measured / self.explicit if self.explicit > 0 else 0.0


def _k0(problem: FilterProblem) -> float:
    return 1.0 / (2.0 * min(problem.alpha**2 * problem.indicator.lower_bound, 0.5))


def verify_h1_bound(problem: FilterProblem, u: SolenoidalField, solution: FilterSolution, slack: float = 1e-6) -> BoundReport:
    """Ratio ||u_a||_{H1}^2 / ||u||^2 against 1 / (2 min(alpha^2 beta, 1/2))."""
    u2 = sobolev_norm(u, 0) ** 2
    ua = sobolev_norm(solution.u_alpha, 1, homogeneous=False) ** 2
    measured = ua / u2 if u2 > 0 else 0.0
    bound = _k0(problem)
    return BoundReport(measured, bound, bound, 1.0, ua > bound * u2 + slack)


def _require_cutoff(problem: FilterProblem):
    m = problem.mollifier
    if m.kind != "cutoff" or math.isinf(m.kappa):
        raise ValueError("this estimate needs a finite cutoff mollifier")


def explicit_k1(problem: FilterProblem) -> float:
    if problem.indicator.C_A == 0.0:
        return 1.0 / problem.coercivity
    _require_cutoff(problem)
    L = problem.grid.L
    inner_term = problem.alpha**2 * problem.indicator.C_A * problem.mollifier.l2_norm(L) * math.sqrt(_k0(problem))
    return max(inner_term, 1.0) / problem.coercivity


def verify_h1_continuous_dependence(problem: FilterProblem, u1: SolenoidalField, u2: SolenoidalField) -> BoundReport:
    K1 = explicit_k1(problem)
    s1 = solve_filter(problem, u1)
    s2 = s1 if u2 is u1 else solve_filter(problem, u2)
    measured = sobolev_norm(s1.u_alpha - s2.u_alpha, 1, homogeneous=False)
    bound = K1 * (sobolev_norm(u2, 0) + 1.0) * sobolev_norm(u1 - u2, 0)
    # solver tolerance enters both solves
    tol_allow = 2e-10 * (sobolev_norm(u1, 0) + sobolev_norm(u2, 0)) / problem.coercivity
    return BoundReport(measured, bound, bound, 1.0, measured > bound + tol_allow)


def verify_h2_bound(problem: FilterProblem, u: SolenoidalField, solution: FilterSolution) -> BoundReport:
    measured = sobolev_norm(solution.u_alpha, 2, homogeneous=False)
    if not np.isfinite(measured):
        raise FloatingPointError("H2 norm of the filtered field is not finite")
    unorm = sobolev_norm(u, 0)
    if problem.indicator.kind == "constant_one":
        phi_h1 = 0.0
    else:
        _require_cutoff(problem)
        phi_h1 = problem.mollifier.h1_norm(problem.grid.L)
    lead = problem.alpha**2 * math.sqrt(_k0(problem)) * problem.indicator.C_A * phi_h1
    explicit = max(lead, 1.0) / problem.coercivity * (unorm + 1.0) * unorm
    fudge = fitted_constants()["h2_bound"]
    return BoundReport(measured, fudge * explicit, explicit, fudge, measured > fudge * explicit)


def verify_h2_continuous_dependence(problem: FilterProblem, u1: SolenoidalField, u2: SolenoidalField) -> BoundReport:
    from .constants import ModelParams, compute_chain

    ind = problem.indicator
    if ind.kind == "constant_one":
        phi_l2 = phi_h1 = 1.0
    else:
        _require_cutoff(problem)
        phi_l2 = problem.mollifier.l2_norm(problem.grid.L)
        phi_h1 = problem.mollifier.h1_norm(problem.grid.L)
    params = ModelParams(
        alpha=problem.alpha, beta=ind.lower_bound, nu=1.0, L=problem.grid.L,
        phi_l2=phi_l2, phi_h1=phi_h1, c_a=ind.C_A, c_a_prime=ind.C_A_prime,
        f_hminus1=1.0, u0_l2=1.0, T=1.0,
    )
    K3 = compute_chain(params).K3
    s1 = solve_filter(problem, u1)
    s2 = s1 if u2 is u1 else solve_filter(problem, u2)
    measured = sobolev_norm(s1.u_alpha - s2.u_alpha, 2, homogeneous=False)
    n1, n2 = sobolev_norm(u1, 0), sobolev_norm(u2, 0)
    explicit = K3 * (n1 + n2 + 1.0) ** 2 * sobolev_norm(u1 - u2, 0)
    fudge = fitted_constants()["h2_dependence"]
    return BoundReport(measured, fudge * explicit, explicit, fudge, measured > fudge * explicit)


@dataclass(frozen=True)
class BetaGapResult:
    betas: tuple
    gaps: tuple
    C: float
    passed: bool


def beta_gap_check(grid: TorusGrid, u: SolenoidalField, alpha: float, c: float, kappa: float, betas) -> BetaGapResult:
    """||u_{beta,a} - u_{Helmholtz,a}||_{H1} <= C (1 - beta), C fitted on the first beta."""
    if len(betas) < 3 or any(b2 <= b1 for b1, b2 in zip(betas, betas[1:])):
        raise ValueError("need at least three increasing beta values")
    mol = MollifierSpec("cutoff", kappa)
    ref = solve_filter(FilterProblem(alpha, IndicatorSpec("constant_one"), mol, grid), u).u_alpha
    gaps = []
    for b in betas:
        p = FilterProblem(alpha, IndicatorSpec("smooth_local", beta=b, c=c), mol, grid)
        gaps.append(sobolev_norm(solve_filter(p, u).u_alpha - ref, 1, homogeneous=False))
    C = gaps[0] / (1.0 - betas[0])
    floor = 1e-9 * sobolev_norm(u, 0)
    ok = all(g <= C * (1.0 - b) + floor for b, g in zip(betas[1:], gaps[1:]))
    return BetaGapResult(tuple(betas), tuple(gaps), C, ok)
