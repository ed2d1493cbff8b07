"""Energy model interface shared by samplers, training, and evaluation.

An energy model defines an unnormalized density pi(x) = exp(-E(x)) on
R^dim. Every energy and gradient evaluation is counted per point, so a
batched call on B points adds B to the corresponding counter; a combined
energy-and-gradient call counts one energy and one gradient per point.
Counts only ever increase, and all sample-efficiency accounting in the
pipeline reduces to deltas of these counters. Increments are plain int
updates on one object, which is safe under the usual single-writer use.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class UnsupportedOracleError(RuntimeError):
    """Raised when exact target samples are requested from a model without them."""


@dataclass
class EvalCounter:
    energy_calls: int = 0
    grad_calls: int = 0

    @property
    def total(self) -> int:
        return self.energy_calls + self.grad_calls


class EnergyModel:
    """Base class. Subclasses implement _energy / _gradient on (B, dim) arrays."""

    name: str = "energy"

    def __init__(self, dim: int):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.counter = EvalCounter()

    @property
    def eval_count(self) -> int:
        return self.counter.total

    # -- shape plumbing ----------------------------------------------------

    def _as_batch(self, x) -> tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            if x.shape != (self.dim,):
                raise ValueError(f"expected point of dim {self.dim}, got {x.shape}")
            return x[None, :], True
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise ValueError(f"expected (B, {self.dim}) batch, got {x.shape}")
        return x, False

    # -- public API ----------------------------------------------------------

    def energy(self, x):
        xb, single = self._as_batch(x)
        self.counter.energy_calls += xb.shape[0]
        e = self._energy(xb)
        return float(e[0]) if single else e

    def gradient(self, x):
        xb, single = self._as_batch(x)
        self.counter.grad_calls += xb.shape[0]
        g = self._gradient(xb)
        return g[0] if single else g

    def energy_and_gradient(self, x):
        xb, single = self._as_batch(x)
        self.counter.energy_calls += xb.shape[0]
        self.counter.grad_calls += xb.shape[0]
        e, g = self._energy_and_gradient(xb)
        if single:
            return float(e[0]), g[0]
        return e, g

    # Raw variants exist so that augmented (exploration-shaped) energies can
    # hand back the unshaped value from the same evaluation. For plain models
    # the raw value is the value itself.

    def energy_with_raw(self, x):
        e = self.energy(x)
        return e, e

    def energy_and_gradient_with_raw(self, x):
        e, g = self.energy_and_gradient(x)
        return e, g, e

    def oracle_sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        raise UnsupportedOracleError(f"{self.name} has no exact sampler")

    @property
    def has_oracle(self) -> bool:
        try:
            self.oracle_sample  # attribute exists on all models
        except AttributeError:  # pragma: no cover
            return False
        return type(self).oracle_sample is not EnergyModel.oracle_sample

    # -- implementation hooks ------------------------------------------------

    def _energy(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _gradient(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _energy_and_gradient(self, X: np.ndarray):
        return self._energy(X), self._gradient(X)


class GaussianEnergy(EnergyModel):
    """E(x) = ||x||^2 / (2 std^2), so pi is N(0, std^2 I) up to Z = (2 pi std^2)^(d/2)."""

    def __init__(self, dim: int, std: float = 1.0):
        super().__init__(dim)
        if std <= 0:
            raise ValueError("std must be positive")
        self.std = float(std)
        self.name = f"gaussian{dim}"

    def _energy(self, X):
        return np.sum(X * X, axis=1) / (2.0 * self.std**2)

    def _gradient(self, X):
        return X / self.std**2

    @property
    def log_partition(self) -> float:
        return 0.5 * self.dim * np.log(2.0 * np.pi * self.std**2)

    def oracle_sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.std * rng.standard_normal((n, self.dim))
