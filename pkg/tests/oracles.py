"""Dense reference solvers shared by the filter and acceptance tests."""

import numpy as np

from nsalpha.filters import apply_filter_operator, coefficient_field
from nsalpha.spectral import SolenoidalField, inner

TWO_PI = 2 * np.pi


def solenoidal_basis(grid):
    """Real basis of the dealiased solenoidal subspace, in half-spectrum storage.

    Each mode pair (k, -k) contributes two polarisations times {1, i}.
    """
    N = grid.N
    basis = []
    seen = set()
    zmax = grid.zmax
    for a in range(-zmax, zmax + 1):
        for b in range(-zmax, zmax + 1):
            for c in range(0, zmax + 1):
                z = (a, b, c)
                if z == (0, 0, 0):
                    continue
                if c == 0:
                    key = max(z, tuple(-t for t in z))
                    if key in seen:
                        continue
                    seen.add(key)
                k = np.array(z, float) * TWO_PI / grid.L
                # two unit vectors orthogonal to k
                trial = np.eye(3)[np.argmin(np.abs(k))]
                e1 = np.cross(k, trial)
                e1 /= np.linalg.norm(e1)
                e2 = np.cross(k, e1)
                e2 /= np.linalg.norm(e2)
                for e in (e1, e2):
                    for ph in (1.0, 1j):
                        arr = np.zeros((3,) + grid.spectral_shape, complex)
                        arr[:, a % N, b % N, c] = e * ph
                        if c == 0:
                            arr[:, (-a) % N, (-b) % N, 0] = e * np.conj(ph)
                        basis.append(SolenoidalField(grid, arr))
    return basis


def dense_solve(problem, u):
    grid = problem.grid
    A = coefficient_field(problem, u)
    basis = solenoidal_basis(grid)
    n = len(basis)
    M = np.empty((n, n))
    images = [apply_filter_operator(problem, A, b) for b in basis]
    for i, bi in enumerate(basis):
        for j, img in enumerate(images):
            M[i, j] = inner(bi, img)
    rhs = np.array([inner(bi, u.dealiased()) for bi in basis])
    coef = np.linalg.solve(M, rhs)
    out = sum(cf * b.coeffs for cf, b in zip(coef, basis))
    return SolenoidalField(grid, out)
