"""Capacity-bounded sample buffer with rank-based prioritized replay.

The buffer stores (x, E(x)) pairs produced by search. When full, the
highest-energy entries are evicted first. Replay draws entries with
replacement with probability

    P(i) proportional to 1 / (k * N + rank_i),

where rank 0 is the lowest-energy entry, N is the current size, and
k = 0.01 by default. Ties in energy are broken by insertion order, so
sampling is deterministic given the generator state.
"""

from __future__ import annotations

import csv

import numpy as np

DEFAULT_RANK_K = 0.01


class BufferEmptyError(RuntimeError):
    pass


class ReplayBuffer:
    def __init__(self, capacity: int, dim: int, rank_k: float = DEFAULT_RANK_K):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.dim = int(dim)
        self.rank_k = float(rank_k)
        self._x = np.empty((0, dim), dtype=np.float64)
        self._e = np.empty(0, dtype=np.float64)
        self._birth = np.empty(0, dtype=np.int64)  # insertion counter, for ties
        self._next_id = 0
        self._order = None  # indices sorted by (energy, birth)
        self._cum = None  # cumulative rank weights aligned with _order

    def __len__(self) -> int:
        return self._e.shape[0]

    def insert(self, x: np.ndarray, energies: np.ndarray) -> None:
        """Append a batch; evict highest-energy entries beyond capacity."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        e = np.atleast_1d(np.asarray(energies, dtype=np.float64))
        if x.shape != (e.shape[0], self.dim):
            raise ValueError("batch shapes do not match buffer dim")
        if not np.all(np.isfinite(e)):
            raise ValueError("refusing to insert non-finite energies")
        birth = np.arange(self._next_id, self._next_id + e.shape[0], dtype=np.int64)
        self._next_id += e.shape[0]
        self._x = np.concatenate([self._x, x], axis=0)
        self._e = np.concatenate([self._e, e])
        self._birth = np.concatenate([self._birth, birth])
        if len(self) > self.capacity:
            order = np.lexsort((self._birth, self._e))
            keep = order[: self.capacity]
            self._x, self._e, self._birth = (
                self._x[keep],
                self._e[keep],
                self._birth[keep],
            )
        self._order = None
        self._cum = None

    def _ensure_rank_cache(self):
        if self._order is None:
            self._order = np.lexsort((self._birth, self._e))
            n = len(self)
            w = 1.0 / (self.rank_k * n + np.arange(n, dtype=np.float64))
            self._cum = np.cumsum(w)

    def rank_probabilities(self) -> np.ndarray:
        """P(i) for every stored entry, in storage order (mainly for tests)."""
        self._ensure_rank_cache()
        n = len(self)
        w = 1.0 / (self.rank_k * n + np.arange(n, dtype=np.float64))
        p = np.empty(n)
        p[self._order] = w / w.sum()
        return p

    def sample_rank_based(self, n: int, rng: np.random.Generator):
        """Draw n entries with replacement. Returns (x, energies)."""
        if len(self) == 0:
            raise BufferEmptyError("cannot sample from an empty buffer")
        self._ensure_rank_cache()
        u = rng.uniform(0.0, self._cum[-1], size=n)
        pos = np.searchsorted(self._cum, u, side="right")
        idx = self._order[np.minimum(pos, len(self) - 1)]
        return self._x[idx].copy(), self._e[idx].copy()

    def min_energy(self) -> float:
        if len(self) == 0:
            raise BufferEmptyError("empty buffer")
        return float(self._e.min())

    # -- snapshots -----------------------------------------------------------

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow([f"x_{i + 1}" for i in range(self.dim)] + ["energy"])
            for row, e in zip(self._x, self._e):
                w.writerow([f"{v:.17g}" for v in row] + [f"{e:.17g}"])

    @classmethod
    def load_csv(cls, path, capacity: int, rank_k: float = DEFAULT_RANK_K):
        data = np.genfromtxt(path, delimiter=",", skip_header=1, dtype=np.float64)
        data = np.atleast_2d(data)
        buf = cls(capacity, data.shape[1] - 1, rank_k=rank_k)
        buf.insert(data[:, :-1], data[:, -1])
        return buf
