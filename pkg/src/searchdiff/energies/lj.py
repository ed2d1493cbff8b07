"""Lennard-Jones clusters with a harmonic center-of-mass restraint.

For n particles at positions r_1..r_n in R^3 (state dim 3n),

    E = 2 kappa sum_{i<j} eps [ (sig/r_ij)^12 - 2 (sig/r_ij)^6 ]
        + (lam/2) sum_i || r_i - r_cm ||^2

with kappa = eps = sig = lam = 1. Pair distances are clamped below at
r_min = 0.65: closer pairs are evaluated at r_min and contribute zero
gradient, which caps the energy of overlapping configurations and keeps
sampler steps finite near the repulsive wall.
"""

from __future__ import annotations

import numpy as np

from .base import EnergyModel


class LennardJones(EnergyModel):
    def __init__(
        self,
        n_particles: int,
        kappa: float = 1.0,
        eps: float = 1.0,
        sig: float = 1.0,
        lam: float = 1.0,
        r_min: float = 0.65,
    ):
        super().__init__(3 * n_particles)
        self.n_particles = n_particles
        self.kappa = float(kappa)
        self.eps = float(eps)
        self.sig = float(sig)
        self.lam = float(lam)
        self.r_min = float(r_min)
        self.name = f"lj{n_particles}"
        self._iu = np.triu_indices(n_particles, k=1)

    def _pair_dists(self, R):
        # R: (B, n, 3) -> clamped pair distances (B, n_pairs), pre-clamp too
        diff = R[:, self._iu[0], :] - R[:, self._iu[1], :]
        r = np.sqrt(np.sum(diff * diff, axis=2))
        return diff, r, np.maximum(r, self.r_min)

    def _energy(self, X):
        B = X.shape[0]
        R = X.reshape(B, self.n_particles, 3)
        _, _, rc = self._pair_dists(R)
        s6 = (self.sig / rc) ** 6
        pair = 2.0 * self.kappa * self.eps * (s6 * s6 - 2.0 * s6)
        com = R.mean(axis=1, keepdims=True)
        rest = 0.5 * self.lam * np.sum((R - com) ** 2, axis=(1, 2))
        return np.sum(pair, axis=1) + rest

    def _gradient(self, X):
        B = X.shape[0]
        R = X.reshape(B, self.n_particles, 3)
        diff, r, rc = self._pair_dists(R)
        s6 = (self.sig / rc) ** 6
        # dE/dr at clamped distance; zero where the clamp is active
        dpair = 24.0 * self.kappa * self.eps * (s6 - s6 * s6) / rc
        dpair = np.where(r > self.r_min, dpair, 0.0)
        coef = dpair / np.maximum(r, 1e-300)  # per-pair force / distance
        G = np.zeros_like(R)
        f = coef[:, :, None] * diff
        np.add.at(G, (slice(None), self._iu[0]), f)
        np.add.at(G, (slice(None), self._iu[1]), -f)
        com = R.mean(axis=1, keepdims=True)
        G += self.lam * (R - com)
        return G.reshape(B, self.dim)
