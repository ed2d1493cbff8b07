"""Evaluation: log Z sandwich bounds and an energy-space transport distance.

For any drift, the per-trajectory importance ratio

    l(tau) = -E(x_1) + log P_B(tau | x_1) - log P_F(tau)

satisfies E_{P_F}[exp(l)] = Z exactly. Averaging l itself under forward
rollouts gives a lower bound on log Z (Jensen); averaging it under
backward bridges seeded with target samples gives an upper bound. The two
estimates sandwich log Z and their gap measures how far the sampler is
from the target. When the seeds come from a reference chain instead of an
exact sampler the upper bound is only as trustworthy as the chain.

energy_w2 is the 1-D 2-Wasserstein distance between two samples of
energies: with equal counts it is the root mean squared difference of the
sorted values, otherwise both samples are resampled to the larger count by
linear quantile interpolation first.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import learner as L

_EVAL_CHUNK = 512


@dataclass
class Bound:
    value: float
    se: float
    n: int


def _ratio_chunks(lrn: L.Learner, trajs_energies) -> Bound:
    vals = []
    for traj, energies in trajs_energies:
        lpf = L.log_pf(lrn.params, traj)
        lpb = L.log_pb(traj)
        with np.errstate(invalid="ignore"):
            ell = -energies + lpb - lpf
            ok = traj.valid & np.isfinite(ell)
        vals.append(ell[ok])
    ell = np.concatenate(vals)
    if ell.size == 0:
        return Bound(float("nan"), float("nan"), 0)
    se = float(ell.std(ddof=1) / np.sqrt(ell.size)) if ell.size > 1 else float("inf")
    return Bound(float(ell.mean()), se, int(ell.size))


def elbo(lrn: L.Learner, n: int, rng: np.random.Generator) -> Bound:
    """Lower bound: mean log-ratio under n forward rollouts."""

    def gen():
        done = 0
        while done < n:
            b = min(_EVAL_CHUNK, n - done)
            traj = lrn.rollout(b, rng)
            energies = np.full(b, np.inf)
            if np.any(traj.valid):
                energies[traj.valid] = lrn.model.energy(traj.terminal[traj.valid])
            done += b
            yield traj, energies

    return _ratio_chunks(lrn, gen())


def eubo(lrn: L.Learner, target_x1: np.ndarray, rng: np.random.Generator) -> Bound:
    """Upper bound: mean log-ratio under bridges seeded at target samples."""
    target_x1 = np.atleast_2d(np.asarray(target_x1, dtype=np.float64))

    def gen():
        for i in range(0, target_x1.shape[0], _EVAL_CHUNK):
            x1 = target_x1[i : i + _EVAL_CHUNK]
            traj = lrn.bridge_from(x1, rng)
            yield traj, lrn.model.energy(x1)

    return _ratio_chunks(lrn, gen())


def elbo_terminals(lrn: L.Learner, n: int, rng: np.random.Generator):
    """ELBO plus the rollout terminals and their energies, for reuse.

    Evaluation wants both the bound and an energy histogram of the same
    rollouts without paying for the energy calls twice.
    """
    chunks = []

    def gen():
        done = 0
        while done < n:
            b = min(_EVAL_CHUNK, n - done)
            traj = lrn.rollout(b, rng)
            energies = np.full(b, np.inf)
            if np.any(traj.valid):
                energies[traj.valid] = lrn.model.energy(traj.terminal[traj.valid])
            chunks.append((traj.terminal, energies, traj.valid))
            done += b
            yield traj, energies

    bound = _ratio_chunks(lrn, gen())
    x1 = np.concatenate([c[0] for c in chunks])
    e = np.concatenate([c[1] for c in chunks])
    valid = np.concatenate([c[2] for c in chunks])
    return bound, x1[valid], e[valid]


def energy_w2(a: np.ndarray, b: np.ndarray) -> float:
    """2-Wasserstein distance between two 1-D empirical distributions."""
    a = np.sort(np.asarray(a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(b, dtype=np.float64).ravel())
    if a.size == 0 or b.size == 0:
        raise ValueError("need nonempty samples")
    if a.size != b.size:
        m = max(a.size, b.size)
        p = (np.arange(m) + 0.5) / m
        a = np.quantile(a, p)
        b = np.quantile(b, p)
    return float(np.sqrt(np.mean((a - b) ** 2)))


@dataclass
class MetricsRecord:
    step: int
    round: int
    elbo: float
    eubo: float
    elbo_se: float
    eubo_se: float
    gap: float
    log_z_theta: float
    energy_w2: float | None
    cumulative_energy_calls: int
    cumulative_eval_calls: int
    wall_time_s: float

    def to_json_line(self) -> str:
        """Canonical serialization for metrics.jsonl.

        Wall-clock time is genuinely nondeterministic, so it stays out of
        the file (identical config and seed must reproduce it byte for
        byte); it remains available on the in-memory record. Non-finite
        floats serialize as null.
        """
        d = asdict(self)
        d.pop("wall_time_s")
        for k, v in d.items():
            if isinstance(v, float) and not np.isfinite(v):
                d[k] = None
        return json.dumps(d, allow_nan=False)


def append_jsonl(path, record: MetricsRecord) -> None:
    with open(path, "a") as f:
        f.write(record.to_json_line() + "\n")
        f.flush()
