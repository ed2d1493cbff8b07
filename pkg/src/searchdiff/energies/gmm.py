"""Gaussian mixture energies, including the 40-mode planar benchmark.

E(x) = -log( (1/K) sum_i N(x; mu_i, sigma^2 I) ), a normalized density,
so the true log partition is exactly 0. The benchmark means are 40 iid
draws from Uniform([-40, 40]^2); the draw is frozen below (seed 2024 of
numpy's default PCG64 generator) so every checkout sees the same target.
"""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp, softmax

from .base import EnergyModel

GMM40_MEANS_SEED = 2024

# 40 iid Uniform([-40, 40]^2) draws, rng = np.random.default_rng(2024).
GMM40_MEANS = np.array(
    [
        (14.066507038502543, -22.854143900939388),
        (-15.243837529464663, 23.957287741986654),
        (39.664167909237335, -28.621454777595858),
        (-33.70195729904008, -25.53409490425163),
        (-11.228248664851925, -26.430460023436133),
        (7.100745243178409, 9.344601105902242),
        (-31.569145620129948, 5.258484082066445),
        (-39.62962853372914, -2.790464047294215),
        (38.04977581028301, 23.954275076119757),
        (7.745789336329487, -13.972027593382201),
        (-23.492487089157574, -4.581954632573179),
        (-17.75668802063878, 29.996627210097913),
        (-22.947412341282583, -18.060399659577556),
        (24.57455891742866, -18.53077392200173),
        (-18.55497043458966, -34.32945726158746),
        (-2.6232948939727265, -18.863564804762518),
        (31.11536304251939, -17.09453499659082),
        (21.901354535883, -1.0204111158171685),
        (-2.5584762452313043, 37.19441666243824),
        (31.858186744923557, -33.677254632195854),
        (-20.383658347338738, -25.217033705869678),
        (32.437992323274955, 4.306563377613976),
        (-10.267281533877988, 26.71176247431633),
        (-12.098193725790942, 14.532324158745212),
        (-21.731954419541005, -38.09021686975715),
        (15.689518678592485, -13.051778738539063),
        (-12.640592182304069, -17.9327305594363),
        (-19.89250111059972, 5.608442305981228),
        (-13.291502317089439, -5.952176635943324),
        (-23.84561552465975, 0.4127736761490013),
        (6.830978160627595, -6.3759871281696405),
        (-7.724250712392482, 35.51542533550008),
        (-36.14300970832578, -13.914096758835992),
        (1.514506445531424, 7.876332646722766),
        (-36.61639150208214, -20.699456482838237),
        (-35.659492519958064, -39.381539251625796),
        (-14.23217708152216, -7.4401031590336615),
        (28.733948227989785, -38.92188369384985),
        (17.29884840549113, -3.4437199241890326),
        (7.126001020466894, -28.288446465901195),
    ],
    dtype=np.float64,
)


class GaussianMixture(EnergyModel):
    """Equal-weight isotropic Gaussian mixture with fixed means."""

    def __init__(self, means: np.ndarray, sigma: float = 1.0, name: str = "gmm"):
        means = np.atleast_2d(np.asarray(means, dtype=np.float64))
        super().__init__(means.shape[1])
        if sigma <= 0:
            raise ValueError("sigma must be positive")
        self.means = means
        self.sigma = float(sigma)
        self.name = name
        self._log_norm = np.log(means.shape[0]) + 0.5 * self.dim * np.log(
            2.0 * np.pi * self.sigma**2
        )

    def _component_logits(self, X):
        # -||x - mu_i||^2 / (2 sigma^2), shape (B, K)
        d = X[:, None, :] - self.means[None, :, :]
        return -np.sum(d * d, axis=2) / (2.0 * self.sigma**2)

    def _energy(self, X):
        return -logsumexp(self._component_logits(X), axis=1) + self._log_norm

    def _gradient(self, X):
        w = softmax(self._component_logits(X), axis=1)
        # grad = sum_i w_i (x - mu_i) / sigma^2
        return (X - w @ self.means) / self.sigma**2

    def _energy_and_gradient(self, X):
        logits = self._component_logits(X)
        e = -logsumexp(logits, axis=1) + self._log_norm
        w = softmax(logits, axis=1)
        g = (X - w @ self.means) / self.sigma**2
        return e, g

    @property
    def log_partition(self) -> float:
        return 0.0

    def oracle_sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        comp = rng.integers(0, self.means.shape[0], size=n)
        return self.means[comp] + self.sigma * rng.standard_normal((n, self.dim))


def gmm40() -> GaussianMixture:
    """The 40-mode planar benchmark mixture, unit component covariance."""
    return GaussianMixture(GMM40_MEANS, sigma=1.0, name="gmm40")
