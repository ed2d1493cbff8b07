"""Gradient-guided MCMC searchers that feed the replay buffer.

Three chain families over an energy model E (target pi proportional to
exp(-E)):

* MALA: Langevin proposals x' = x - grad E(x) dt + sqrt(2 dt) z with the
  Metropolis correction, step size adapted toward 57.4% acceptance.
* AIS: annealed path pi_t proportional to pi_0^(1-b) pi_T^b, b = t/T,
  uncorrected Langevin transitions, unbiased importance weights for Z.
* Underdamped Langevin: velocity dynamics with friction, no correction.

Every searcher returns the retained states with their raw energies, a
log-partition estimate, and honest energy-call accounting. When handed an
exploration-augmented energy the dynamics run on the augmented surface
while retained energies and the log Z estimate always use the raw E.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .rnd import RNDModule, WhiteningStats

logger = logging.getLogger(__name__)

TARGET_ACCEPT = 0.574
DIVERGENCE_THRESHOLD = 1e6


@dataclass
class SearcherConfig:
    kind: str = "mala"  # mala | ais | langevin
    n_chains: int = 300
    chain_length: int = 4000
    burn_in: int = 2000
    step_size: float = 1e-3
    prior_std: float = 1.0
    target_accept: float = TARGET_ACCEPT
    adapt_eta: float = 0.05
    adapt_window: int = 50
    step_min: float = 1e-8
    step_max: float = 1.0
    friction: float = 1.0
    kt: float = 1.0

    def __post_init__(self):
        if self.kind not in ("mala", "ais", "langevin"):
            raise ValueError(f"unknown searcher kind {self.kind!r}")
        if self.n_chains < 1 or self.chain_length < 1:
            raise ValueError("need at least one chain and one step")
        if not 0 <= self.burn_in < self.chain_length and self.kind != "ais":
            raise ValueError("burn_in must lie inside the chain")
        if self.step_size <= 0 or self.prior_std <= 0:
            raise ValueError("step_size and prior_std must be positive")
        if self.adapt_window < 50:
            raise ValueError("acceptance-rate windows below 50 steps are too noisy")


@dataclass
class SearchResult:
    samples: np.ndarray  # (N, dim) retained states
    energies: np.ndarray  # (N,) raw energies of the retained states
    log_z_hat: float
    estimator_kind: str  # "heuristic" | "unbiased_ais"
    accept_rate: float | None  # MALA only
    energy_calls: int  # model-counter delta consumed by this run
    n_divergent: int
    final_step_size: float


def heuristic_log_z(energies: np.ndarray) -> float:
    """log( (1/N) sum exp(-E_i) ), a biased estimate used only to seed log Z.

    It is a Monte Carlo integral against the empirical search measure, not
    an importance-weighted one, so it systematically misestimates Z; it is
    still a serviceable starting point for the trained scalar.
    """
    energies = np.asarray(energies, dtype=np.float64)
    if energies.size == 0:
        raise ValueError("no energies to estimate from")
    return float(logsumexp(-energies) - np.log(energies.size))


def adapt_step_size(
    step: float,
    observed_rate: float,
    target: float = TARGET_ACCEPT,
    eta: float = 0.05,
    lo: float = 1e-8,
    hi: float = 1.0,
) -> float:
    """Multiplicative step-size controller: step *= exp(eta * (rate - target))."""
    return float(np.clip(step * np.exp(eta * (observed_rate - target)), lo, hi))


def mala_log_accept_ratio(x, xp, e_x, g_x, e_xp, g_xp, dt: float) -> np.ndarray:
    """log alpha for proposals xp from x under proposal N(x - g dt, 2 dt I).

    Equals log pi(x') q(x|x') - log pi(x) q(x'|x); the Gaussian
    normalization constants cancel because both kernels share dt.
    """
    fwd = -np.sum((xp - x + g_x * dt) ** 2, axis=-1) / (4.0 * dt)
    rev = -np.sum((x - xp + g_xp * dt) ** 2, axis=-1) / (4.0 * dt)
    return (e_x - e_xp) + (rev - fwd)


class AugmentedEnergy:
    """Raw energy minus a scaled novelty bonus: E~ = E - alpha * novelty.

    Low E~ regions are either low raw energy or poorly predicted (novel),
    so chains on E~ both refine known modes and seek new ones. Whitening
    statistics are frozen at construction; the wrapper shares the raw
    model's evaluation counter, and novelty evaluations are not energy
    calls.
    """

    def __init__(
        self,
        base,
        rnd: RNDModule,
        alpha: float,
        stats: WhiteningStats | None = None,
    ):
        self.base = base
        self.rnd = rnd
        self.alpha = float(alpha)
        self.stats = stats if stats is not None else rnd.normalizer.snapshot()
        self.dim = base.dim
        self.name = f"{base.name}+rnd"
        self.counter = base.counter

    def energy(self, x):
        return self.energy_with_raw(x)[0]

    def energy_with_raw(self, x):
        e_raw = self.base.energy(x)
        nov = self.rnd.novelty(x, self.stats)
        return e_raw - self.alpha * nov, e_raw

    def gradient(self, x):
        g = self.base.gradient(x)
        return g - self.alpha * self.rnd.novelty_grad(x, self.stats)

    def energy_and_gradient(self, x):
        e, g, _ = self.energy_and_gradient_with_raw(x)
        return e, g

    def energy_and_gradient_with_raw(self, x):
        e_raw, g_raw = self.base.energy_and_gradient(x)
        nov, dnov = self.rnd.novelty_and_grad(x, self.stats)
        return e_raw - self.alpha * nov, g_raw - self.alpha * dnov, e_raw


def _prior_logpdf(x: np.ndarray, std: float) -> np.ndarray:
    d = x.shape[-1]
    return -0.5 * np.sum(x * x, axis=-1) / std**2 - 0.5 * d * np.log(
        2.0 * np.pi * std**2
    )


def run_mala(model, config: SearcherConfig, rng: np.random.Generator) -> SearchResult:
    """Metropolis-adjusted Langevin over the (possibly augmented) energy.

    Every post-burn-in state of the Metropolis-filtered chain is retained,
    rejections repeating the current state, so the retained pool is an
    unbiased (if autocorrelated) draw from the target. Retaining only the
    moved states would reweight the target by each state's escape
    probability and visibly inflate tail mass.
    """
    calls_before = model.counter.total
    C, d = config.n_chains, model.dim
    dt = config.step_size
    x = config.prior_std * rng.standard_normal((C, d))
    e, g, e_raw = model.energy_and_gradient_with_raw(x)

    kept_x, kept_e = [], []
    n_divergent = 0
    win_accepts = 0
    win_proposals = 0
    post_accepts = 0
    post_proposals = 0

    for step in range(1, config.chain_length + 1):
        z = rng.standard_normal((C, d))
        xp = x - g * dt + np.sqrt(2.0 * dt) * z
        ep, gp, ep_raw = model.energy_and_gradient_with_raw(xp)
        ok = np.isfinite(ep) & np.all(np.isfinite(xp), axis=1)
        n_divergent += int(np.sum(~ok))
        with np.errstate(invalid="ignore", over="ignore"):
            log_alpha = mala_log_accept_ratio(x, xp, e, g, ep, gp, dt)
            log_alpha = np.where(ok, log_alpha, -np.inf)
        accept = ok & (np.log(rng.uniform(size=C)) < log_alpha)

        x = np.where(accept[:, None], xp, x)
        e = np.where(accept, ep, e)
        e_raw = np.where(accept, ep_raw, e_raw)
        g = np.where(accept[:, None], gp, g)

        # runaway but finite chains restart from the prior
        blown = np.max(np.abs(x), axis=1) > DIVERGENCE_THRESHOLD
        if np.any(blown):
            n_divergent += int(np.sum(blown))
            logger.warning("mala: restarting %d divergent chains", int(np.sum(blown)))
            x[blown] = config.prior_std * rng.standard_normal((int(blown.sum()), d))
            eb, gb, eb_raw = model.energy_and_gradient_with_raw(x[blown])
            e[blown], g[blown], e_raw[blown] = eb, gb, eb_raw
            accept = accept & ~blown

        win_accepts += int(accept.sum())
        win_proposals += C
        if step > config.burn_in:
            post_accepts += int(accept.sum())
            post_proposals += C
            kept_x.append(x.copy())
            kept_e.append(e_raw.copy())
        if win_proposals >= config.adapt_window * C:
            dt = adapt_step_size(
                dt,
                win_accepts / win_proposals,
                config.target_accept,
                config.adapt_eta,
                config.step_min,
                config.step_max,
            )
            win_accepts = 0
            win_proposals = 0

    samples = np.concatenate(kept_x) if kept_x else np.empty((0, d))
    energies = np.concatenate(kept_e) if kept_e else np.empty(0)
    return SearchResult(
        samples=samples,
        energies=energies,
        log_z_hat=heuristic_log_z(energies) if energies.size else float("nan"),
        estimator_kind="heuristic",
        accept_rate=post_accepts / post_proposals if post_proposals else None,
        energy_calls=model.counter.total - calls_before,
        n_divergent=n_divergent,
        final_step_size=dt,
    )


def run_ais(model, config: SearcherConfig, rng: np.random.Generator) -> SearchResult:
    """Annealed importance sampling from N(0, prior_std^2 I) to exp(-E).

    Interpolating density: log pi_t = (1 - b_t) log pi_0 - b_t E with
    b_t = t/T over T = chain_length steps. Each step first accumulates the
    weight increment log pi_t - log pi_{t-1} at the current state, then
    moves with one uncorrected Langevin step targeting pi_t (step 1/T).
    E[w] = Z exactly; transitions leave weights untouched.
    """
    calls_before = model.counter.total
    C, d = config.n_chains, model.dim
    T = config.chain_length
    dt = 1.0 / T
    std = config.prior_std

    x = std * rng.standard_normal((C, d))
    log_w = np.zeros(C)
    e, grad_e = model.energy_and_gradient(x)
    alive = np.ones(C, dtype=bool)
    for t in range(1, T + 1):
        beta = t / T
        dbeta = 1.0 / T
        log_w += dbeta * (-e - _prior_logpdf(x, std))
        score = -(1.0 - beta) * x / std**2 - beta * grad_e
        x = x + score * dt + np.sqrt(2.0 * dt) * rng.standard_normal((C, d))
        bad = ~np.all(np.isfinite(x), axis=1) | (
            np.max(np.abs(x), axis=1) > DIVERGENCE_THRESHOLD
        )
        if np.any(bad & alive):
            logger.warning("ais: dropping %d divergent chains", int((bad & alive).sum()))
            alive &= ~bad
            x[bad] = 0.0  # keep the array finite; dropped chains are ignored
        if t < T:
            e, grad_e = model.energy_and_gradient(x)
        else:
            e = model.energy(x)

    n_divergent = int((~alive).sum())
    if not np.any(alive):
        raise RuntimeError("ais: every chain diverged")
    samples = x[alive]
    energies = e[alive]
    log_z = float(logsumexp(log_w[alive]) - np.log(int(alive.sum())))
    return SearchResult(
        samples=samples,
        energies=energies,
        log_z_hat=log_z,
        estimator_kind="unbiased_ais",
        accept_rate=None,
        energy_calls=model.counter.total - calls_before,
        n_divergent=n_divergent,
        final_step_size=dt,
    )


def run_langevin(
    model, config: SearcherConfig, rng: np.random.Generator
) -> SearchResult:
    """Underdamped Langevin with unit mass, Euler-Maruyama discretization.

    dx = v dt,  dv = -grad E dt - friction * v dt + sqrt(2 friction kT) dW.
    No Metropolis correction; every post-burn-in position is retained.
    """
    calls_before = model.counter.total
    C, d = config.n_chains, model.dim
    dt = config.step_size
    noise = np.sqrt(2.0 * config.friction * config.kt * dt)

    x = config.prior_std * rng.standard_normal((C, d))
    v = np.zeros((C, d))
    kept_x = []
    n_divergent = 0
    for step in range(1, config.chain_length + 1):
        g = model.gradient(x)
        x_new = x + v * dt
        v = v - g * dt - config.friction * v * dt + noise * rng.standard_normal((C, d))
        x = x_new
        bad = ~np.all(np.isfinite(x), axis=1) | (
            np.max(np.abs(x), axis=1) > DIVERGENCE_THRESHOLD
        )
        if np.any(bad):
            n_divergent += int(bad.sum())
            logger.warning("langevin: restarting %d divergent chains", int(bad.sum()))
            x[bad] = config.prior_std * rng.standard_normal((int(bad.sum()), d))
            v[bad] = 0.0
        if step > config.burn_in:
            kept_x.append(x.copy())

    samples = np.concatenate(kept_x) if kept_x else np.empty((0, d))
    _, energies = (None, np.empty(0))
    if samples.size:
        energies = np.empty(samples.shape[0])
        # raw energies of retained states, evaluated in manageable blocks
        blk = 65536
        for i in range(0, samples.shape[0], blk):
            _, energies[i : i + blk] = model.energy_with_raw(samples[i : i + blk])
    return SearchResult(
        samples=samples,
        energies=energies,
        log_z_hat=heuristic_log_z(energies) if energies.size else float("nan"),
        estimator_kind="heuristic",
        accept_rate=None,
        energy_calls=model.counter.total - calls_before,
        n_divergent=n_divergent,
        final_step_size=dt,
    )


_RUNNERS = {"mala": run_mala, "ais": run_ais, "langevin": run_langevin}


def run_search(model, config: SearcherConfig, rng: np.random.Generator) -> SearchResult:
    return _RUNNERS[config.kind](model, config, rng)
