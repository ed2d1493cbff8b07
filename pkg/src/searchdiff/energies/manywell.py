"""Product-of-double-wells energy in even dimension d.

Coordinates come in pairs (x_a, x_b). Each pair contributes

    E_pair = x_a^4 - 6 x_a^2 - 0.5 x_a + 0.5 x_b^2

so the density factorizes into d/2 identical double-well marginals on the
first coordinate of each pair and standard normals on the second. The
additive constant is fixed at zero, which makes the log partition

    log Z = (d/2) * ( log I + 0.5 * log(2 pi) ),
    I = integral of exp(-(x^4 - 6 x^2 - 0.5 x)) dx,

computed by adaptive quadrature on [-4, 4]; outside that window the
integrand is below 1e-14 of its peak.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy import integrate

from .base import EnergyModel

_GRID_POINTS = 2**14


def _well_potential(x):
    return x**4 - 6.0 * x**2 - 0.5 * x


@lru_cache(maxsize=1)
def _well_log_integral() -> float:
    # exp(-potential) spans ~e^10, rescale by the minimum for stable quadrature
    grid = np.linspace(-4.0, 4.0, 4097)
    v0 = float(np.min(_well_potential(grid)))
    val, _ = integrate.quad(
        lambda x: np.exp(-(_well_potential(x) - v0)), -4.0, 4.0, limit=200
    )
    return float(np.log(val) - v0)


def manywell_log_partition(dim: int) -> float:
    """Exact log Z of the d-dimensional model, via 1-D quadrature."""
    if dim < 2 or dim % 2 != 0:
        raise ValueError("dim must be a positive even integer")
    return (dim // 2) * (_well_log_integral() + 0.5 * np.log(2.0 * np.pi))


@lru_cache(maxsize=1)
def _well_inverse_cdf_table():
    """Grid and normalized CDF for inverse-transform sampling of the well."""
    grid = np.linspace(-4.0, 4.0, _GRID_POINTS)
    pot = _well_potential(grid)
    dens = np.exp(-(pot - pot.min()))
    cdf = np.concatenate([[0.0], np.cumsum((dens[1:] + dens[:-1]) * 0.5)])
    cdf /= cdf[-1]
    return grid, cdf


class Manywell(EnergyModel):
    """Sum of identical double-well pair energies, E = sum over pairs."""

    def __init__(self, dim: int = 32):
        if dim % 2 != 0:
            raise ValueError("dim must be even")
        super().__init__(dim)
        self.name = f"manywell{dim}"
        self._a = np.arange(0, dim, 2)  # double-well coordinates
        self._b = np.arange(1, dim, 2)  # Gaussian coordinates

    def _energy(self, X):
        xa = X[:, self._a]
        xb = X[:, self._b]
        return np.sum(_well_potential(xa), axis=1) + 0.5 * np.sum(xb * xb, axis=1)

    def _gradient(self, X):
        g = np.empty_like(X)
        xa = X[:, self._a]
        g[:, self._a] = 4.0 * xa**3 - 12.0 * xa - 0.5
        g[:, self._b] = X[:, self._b]
        return g

    @property
    def log_partition(self) -> float:
        return manywell_log_partition(self.dim)

    def oracle_sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Exact sampling: inverse CDF per well coordinate, normals elsewhere."""
        grid, cdf = _well_inverse_cdf_table()
        out = np.empty((n, self.dim), dtype=np.float64)
        u = rng.uniform(size=(n, self._a.size))
        out[:, self._a] = np.interp(u, cdf, grid)
        out[:, self._b] = rng.standard_normal((n, self._b.size))
        return out
