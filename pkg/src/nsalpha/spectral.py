"""Fourier representation of zero-mean vector fields on the periodic box [0, L]^3.

Coefficients follow the convention u_hat_k = (1/L^3) * integral of exp(-i k.x) u(x),
so that u(x) = sum_k u_hat_k exp(i k.x).  Storage is the real-FFT half spectrum:
arrays of shape ``components + (N, N, N//2 + 1)`` with the last axis holding
k3 >= 0.  The negative-k3 half is implied by conj(u_hat_k) = u_hat_{-k}.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field as dc_field
from fractions import Fraction
from functools import cached_property

import numpy as np
import scipy.fft as sfft

log = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi
EPS_DIV = 1e-12
THREADS_ENV = "NSALPHA_THREADS"


def fft_workers() -> int:
    raw = os.environ.get(THREADS_ENV)
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        log.warning("ignoring non-integer %s=%r", THREADS_ENV, raw)
        return 1


class GridMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class TorusGrid:
    L: float
    N: int
    dealias_fraction: Fraction = Fraction(2, 3)

    def __post_init__(self):
        if not (self.L > 0 and np.isfinite(self.L)):
            raise ValueError(f"L must be positive, got {self.L}")
        if self.N < 4 or self.N % 2:
            raise ValueError(f"N must be even and >= 4, got {self.N}")
        frac = Fraction(self.dealias_fraction).limit_denominator(1000)
        if not (0 < frac <= 1):
            raise ValueError(f"dealias_fraction must lie in (0, 1], got {self.dealias_fraction}")
        object.__setattr__(self, "dealias_fraction", frac)
        object.__setattr__(self, "L", float(self.L))
        object.__setattr__(self, "N", int(self.N))

    @property
    def spectral_shape(self) -> tuple[int, int, int]:
        return (self.N, self.N, self.N // 2 + 1)

    @property
    def physical_shape(self) -> tuple[int, int, int]:
        return (self.N, self.N, self.N)

    @cached_property
    def zmax(self) -> int:
        """Largest retained integer wavenumber per axis: |z| < fraction * N / 2."""
        bound = self.dealias_fraction * self.N / 2
        z = int(np.floor(bound))
        return z - 1 if z == bound else z

    @cached_property
    def _z(self):
        zx = np.fft.fftfreq(self.N, 1.0 / self.N)
        zz = np.arange(self.N // 2 + 1, dtype=float)
        return zx[:, None, None], zx[None, :, None], zz[None, None, :]

    @cached_property
    def kx(self):
        return self._z[0] * (TWO_PI / self.L)

    @cached_property
    def ky(self):
        return self._z[1] * (TWO_PI / self.L)

    @cached_property
    def kz(self):
        return self._z[2] * (TWO_PI / self.L)

    @cached_property
    def kvec(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return (self.kx, self.ky, self.kz)

    @cached_property
    def k2(self) -> np.ndarray:
        return np.broadcast_to(self.kx**2 + self.ky**2 + self.kz**2, self.spectral_shape).copy()

    @cached_property
    def kmag(self) -> np.ndarray:
        return np.sqrt(self.k2)

    @cached_property
    def inv_k2(self) -> np.ndarray:
        out = np.zeros(self.spectral_shape)
        nz = self.k2 > 0
        out[nz] = 1.0 / self.k2[nz]
        return out

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        zx, zy, zz = self._z
        m = (np.abs(zx) <= self.zmax) & (np.abs(zy) <= self.zmax) & (np.abs(zz) <= self.zmax)
        return np.broadcast_to(m, self.spectral_shape).copy()

    @cached_property
    def weights(self) -> np.ndarray:
        """Multiplicity of each stored mode in full-spectrum sums (Nyquist plane dropped)."""
        w = np.full(self.spectral_shape, 2.0)
        w[..., 0] = 1.0
        w[..., -1] = 0.0
        return w

    def coordinates(self) -> np.ndarray:
        x = np.arange(self.N) * (self.L / self.N)
        return np.stack(np.meshgrid(x, x, x, indexing="ij"))

    def check_same(self, other: "TorusGrid"):
        if self != other:
            raise GridMismatchError(f"grid mismatch: {self} vs {other}")


def _symmetrize_plane(c: np.ndarray) -> np.ndarray:
    """Enforce conj(c[k]) = c[-k] on the k3 = 0 plane (the only self-conjugate plane kept)."""
    plane = c[..., 0]
    flipped = np.roll(np.flip(plane, axis=(-2, -1)), shift=(1, 1), axis=(-2, -1))
    c[..., 0] = 0.5 * (plane + np.conj(flipped))
    return c


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Immutable zero-mean field; leading axes of ``coeffs`` are components."""

    grid: TorusGrid
    coeffs: np.ndarray = dc_field(repr=False)

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=complex, copy=True)
        if c.shape[-3:] != self.grid.spectral_shape:
            raise ValueError(f"coefficient shape {c.shape} does not match grid {self.grid.spectral_shape}")
        zero = c[..., 0, 0, 0]
        if np.any(zero != 0):
            if np.max(np.abs(zero)) > 1e-14 * max(1.0, np.max(np.abs(c))):
                log.warning("nonzero zero mode %s re-zeroed", np.max(np.abs(zero)))
            c[..., 0, 0, 0] = 0
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, grid: TorusGrid, components=(3,)):
        return cls(grid, np.zeros(tuple(components) + grid.spectral_shape, complex))

    @property
    def components(self) -> tuple[int, ...]:
        return self.coeffs.shape[:-3]

    def __add__(self, other):
        self.grid.check_same(other.grid)
        return SpectralField(self.grid, self.coeffs + other.coeffs)

    def __sub__(self, other):
        self.grid.check_same(other.grid)
        return SpectralField(self.grid, self.coeffs - other.coeffs)

    def __mul__(self, scalar):
        return SpectralField(self.grid, self.coeffs * scalar)

    __rmul__ = __mul__

    def __neg__(self):
        return SpectralField(self.grid, -self.coeffs)

    def dealiased(self) -> "SpectralField":
        return SpectralField(self.grid, self.coeffs * self.grid.dealias_mask)

    def divergence(self) -> np.ndarray:
        kx, ky, kz = self.grid.kvec
        c = self.coeffs
        return 1j * (kx * c[0] + ky * c[1] + kz * c[2])

    def max_divergence(self) -> float:
        return float(np.max(np.abs(self.divergence())))

    def spectral_l2(self) -> float:
        """Euclidean size of the coefficient array over the full spectrum."""
        return float(np.sqrt(np.sum(self.grid.weights * np.abs(self.coeffs) ** 2)))


class SolenoidalField(SpectralField):
    """Vector field with k . u_hat_k = 0 up to EPS_DIV relative."""

    def __post_init__(self):
        super().__post_init__()
        if self.coeffs.shape[:-3] != (3,):
            raise ValueError("solenoidal fields must have 3 components")
        scale = self.spectral_l2()
        kmax = float(self.grid.kmag.max())
        if self.max_divergence() > EPS_DIV * max(scale, 1e-300) * max(kmax, 1.0):
            raise ValueError(f"field is not divergence free: max|k.u| = {self.max_divergence():.3e}")

    @classmethod
    def zeros(cls, grid: TorusGrid, components=(3,)):
        return cls(grid, np.zeros((3,) + grid.spectral_shape, complex))

    @classmethod
    def trusted(cls, grid: TorusGrid, coeffs: np.ndarray) -> "SolenoidalField":
        """Wrap coefficients that are solenoidal by construction (skips the check)."""
        obj = object.__new__(cls)
        c = np.array(coeffs, dtype=complex, copy=True)
        c[..., 0, 0, 0] = 0
        c.flags.writeable = False
        object.__setattr__(obj, "grid", grid)
        object.__setattr__(obj, "coeffs", c)
        return obj


def _project_array(grid: TorusGrid, c: np.ndarray) -> np.ndarray:
    kx, ky, kz = grid.kvec
    kdotc = (kx * c[0] + ky * c[1] + kz * c[2]) * grid.inv_k2
    return np.stack([c[0] - kdotc * kx, c[1] - kdotc * ky, c[2] - kdotc * kz])


def leray_project(v: SpectralField) -> SolenoidalField:
    if v.components != (3,):
        raise ValueError("Leray projection needs a 3-component field")
    return SolenoidalField.trusted(v.grid, _project_array(v.grid, v.coeffs))


def _sum_modes(grid: TorusGrid, density: np.ndarray) -> float:
    return float(grid.L**3 * np.sum(grid.weights * density))


def sobolev_norm(v: SpectralField, s: float, homogeneous: bool = True) -> float:
    g = v.grid
    amp = np.abs(v.coeffs) ** 2
    while amp.ndim > 3:
        amp = amp.sum(axis=0)
    if s == 0:
        w = 1.0
    elif homogeneous:
        w = np.zeros(g.spectral_shape)
        nz = g.k2 > 0
        w[nz] = g.k2[nz] ** s
    else:
        w = (1.0 + g.k2) ** s
    return float(np.sqrt(_sum_modes(g, w * amp)))


def inner(a: SpectralField, b: SpectralField) -> float:
    """Real L^2 inner product, L^3 * sum_k a_k . conj(b_k)."""
    a.grid.check_same(b.grid)
    prod = np.real(a.coeffs * np.conj(b.coeffs))
    while prod.ndim > 3:
        prod = prod.sum(axis=0)
    return _sum_modes(a.grid, prod)


def grad_tensor(v: SpectralField) -> SpectralField:
    """Components ``[..., j]`` hold d_j of each component of v."""
    g = v.grid
    c = v.coeffs
    return SpectralField(g, np.stack([1j * k * c for k in g.kvec], axis=len(v.components)))


def divergence_of_tensor(T: SpectralField) -> SpectralField:
    """Contract the last component axis with the gradient: (div T)_i = d_j T_ij."""
    g = T.grid
    c = T.coeffs
    out = sum(1j * g.kvec[j] * c[..., j, :, :, :] for j in range(3))
    return SpectralField(g, out)


def laplacian(v: SpectralField) -> SpectralField:
    return SpectralField(v.grid, -v.grid.k2 * v.coeffs)


def convolve(phi, v: SpectralField) -> SpectralField:
    """Apply a mollifier through its Fourier symbol (anything exposing ``symbol(grid)``)."""
    sym = phi.symbol(v.grid)
    out = SpectralField(v.grid, v.coeffs * sym)
    if isinstance(v, SolenoidalField):
        return SolenoidalField(v.grid, out.coeffs)
    return out


# ---- transforms on raw arrays (used in hot loops) ----

def to_physical(grid: TorusGrid, c: np.ndarray) -> np.ndarray:
    N = grid.N
    return sfft.irfftn(c * N**3, s=(N, N, N), axes=(-3, -2, -1), workers=fft_workers())


def to_spectral(grid: TorusGrid, samples: np.ndarray) -> np.ndarray:
    N = grid.N
    c = sfft.rfftn(samples, axes=(-3, -2, -1), workers=fft_workers()) / N**3
    return _symmetrize_plane(c)


def physical_transform(v: SpectralField) -> np.ndarray:
    return to_physical(v.grid, v.coeffs)


def spectral_transform(grid: TorusGrid, samples) -> SpectralField:
    samples = np.asarray(samples)
    if np.iscomplexobj(samples):
        if np.any(samples.imag != 0):
            raise ValueError("physical samples must be real")
        samples = samples.real
    if samples.shape[-3:] != grid.physical_shape:
        raise ValueError(f"sample shape {samples.shape} does not match grid {grid.physical_shape}")
    return SpectralField(grid, to_spectral(grid, samples.astype(float)))


def random_solenoidal(
    grid: TorusGrid,
    seed: int,
    spectrum_slope: float = -1.0,
    energy: float | None = None,
    kmax: float | None = None,
) -> SolenoidalField:
    """Gaussian solenoidal field inside the dealiased band with |u_hat_k| ~ |k|^slope.

    ``energy`` rescales to a target ||u||^2_{L^2}; ``kmax`` restricts to |k| <= kmax.
    """
    rng = np.random.default_rng(seed)
    shape = (3,) + grid.spectral_shape
    c = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    env = np.zeros(grid.spectral_shape)
    nz = grid.k2 > 0
    env[nz] = grid.kmag[nz] ** spectrum_slope
    mask = grid.dealias_mask & nz
    if kmax is not None:
        mask &= grid.kmag <= kmax * (1 + 1e-12)
    c = c * env * mask
    c = _project_array(grid, _symmetrize_plane(c))
    c[..., 0, 0, 0] = 0
    u = SolenoidalField(grid, c)
    if energy is not None:
        n2 = sobolev_norm(u, 0) ** 2
        if n2 > 0:
            u = SolenoidalField(grid, c * np.sqrt(energy / n2))
    return u
