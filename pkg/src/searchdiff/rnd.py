"""Random network distillation: novelty via predictor-target disagreement.

A frozen, randomly initialized target network f and a trained predictor
f_hat map whitened states to an embedding; the novelty of a state is

    novelty(x) = || f(z) - f_hat(z) ||^2,   z = (x - mean) / std.

States the predictor has fit well score near zero, unvisited regions stay
high. Whitening statistics are running estimates over the training
stream; a search round takes a frozen snapshot of them so the augmented
energy is a fixed function for the whole search. The target network is
never updated after construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn


@dataclass
class WhiteningStats:
    """Frozen (mean, std) pair applied before both networks."""

    mean: np.ndarray
    std: np.ndarray


class InputNormalizer:
    """Running per-coordinate mean and std (Welford), with frozen snapshots."""

    def __init__(self, dim: int, eps: float = 1e-6):
        self.dim = dim
        self.eps = eps
        self.count = 0
        self._mean = np.zeros(dim, dtype=np.float64)
        self._m2 = np.zeros(dim, dtype=np.float64)

    def update(self, batch: np.ndarray) -> None:
        batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
        n = batch.shape[0]
        if n == 0:
            return
        b_mean = batch.mean(axis=0)
        b_m2 = ((batch - b_mean) ** 2).sum(axis=0)
        delta = b_mean - self._mean
        tot = self.count + n
        self._mean += delta * (n / tot)
        self._m2 += b_m2 + delta**2 * (self.count * n / tot)
        self.count = tot

    def snapshot(self) -> WhiteningStats:
        if self.count < 2:
            return WhiteningStats(self._mean.copy(), np.ones(self.dim))
        std = np.sqrt(self._m2 / self.count)
        return WhiteningStats(self._mean.copy(), np.maximum(std, self.eps))


class RNDModule:
    """Predictor-target pair over one energy model's state space."""

    def __init__(
        self,
        dim: int,
        hidden_dim: int = 256,
        out_dim: int = 64,
        predictor_layers: int = 3,
        target_layers: int = 3,
        lr: float = 5e-4,
        rng: np.random.Generator | None = None,
    ):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.dim = dim
        t_spec = nn.MlpSpec(dim, hidden_dim, out_dim, n_hidden_layers=target_layers)
        p_spec = nn.MlpSpec(dim, hidden_dim, out_dim, n_hidden_layers=predictor_layers)
        self.target = nn.init_params(t_spec, rng)
        self.predictor = nn.init_params(p_spec, rng)
        self.normalizer = InputNormalizer(dim)
        self.adam = nn.AdamState(p_spec.n_params, lr=lr)
        self.novelty_calls = 0  # evaluation count, lets tests pin when RND runs

    def _whiten(self, x, stats: WhiteningStats | None):
        if stats is None:
            stats = self.normalizer.snapshot()
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return (x - stats.mean) / stats.std, stats

    def novelty(self, x, stats: WhiteningStats | None = None) -> np.ndarray:
        z, _ = self._whiten(x, stats)
        self.novelty_calls += z.shape[0]
        diff = nn.forward(self.target, z) - nn.forward(self.predictor, z)
        return np.sum(diff * diff, axis=1)

    def novelty_and_grad(self, x, stats: WhiteningStats | None = None):
        """(novelty, d novelty / dx), whitening chain rule included."""
        z, stats = self._whiten(x, stats)
        self.novelty_calls += z.shape[0]
        ft, cache_t = nn.forward_cached(self.target, z)
        fp, cache_p = nn.forward_cached(self.predictor, z)
        diff = ft - fp
        up = 2.0 * diff
        _, dz_t = nn.backward(self.target, cache_t, up, wrt_params=False)
        _, dz_p = nn.backward(self.predictor, cache_p, -up, wrt_params=False)
        grad = (dz_t + dz_p) / stats.std
        return np.sum(diff * diff, axis=1), grad

    def novelty_grad(self, x, stats: WhiteningStats | None = None) -> np.ndarray:
        return self.novelty_and_grad(x, stats)[1]

    def train_predictor(self, batch: np.ndarray) -> float:
        """One Adam step fitting the predictor to the target on ``batch``.

        The batch also advances the running whitening statistics, so the
        stats track whatever distribution the trainer feeds (buffer draws
        and on-policy terminals). Returns the mean novelty before the step.
        """
        batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
        self.normalizer.update(batch)
        z, _ = self._whiten(batch, None)
        ft = nn.forward(self.target, z)
        fp, cache = nn.forward_cached(self.predictor, z)
        diff = fp - ft
        loss = float(np.mean(np.sum(diff * diff, axis=1)))
        up = 2.0 * diff / batch.shape[0]
        g, _ = nn.backward(self.predictor, cache, up, wrt_input=False)
        self.adam.step(self.predictor.values, g)
        return loss
