"""Round-based orchestration: search, replay training, re-initialization.

One run executes ``n_rounds`` rounds against a single energy model and a
single replay buffer. Each round:

1. Search. Gradient-guided MCMC explores the energy surface; round 1 runs
   on the raw energy, later rounds run on the novelty-augmented energy
   (unless disabled). Retained states enter the buffer with their raw
   energies; the round-1 search also seeds the trained log Z scalar with
   the searcher's heuristic estimate.
2. Inner loop. I trajectory-balance updates alternate between replayed
   (backward-bridged) batches and on-policy rollouts, odd iterations
   off-policy first by default; each update is followed by one RND
   predictor step. Every ``eval_every`` updates the sandwich bounds are
   logged.
3. Between rounds the drift network is re-initialized (log Z, buffer, and
   RND survive), so the next round's training starts fresh on a buffer
   that now covers more of the target.

All randomness flows from one master seed through labeled substreams, so
identical configurations reproduce identical outputs byte for byte. The
run keeps an energy-call ledger split into searcher, learner training,
and evaluation buckets whose sum always equals the model's own counter.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics as M
from . import nn
from .energies import make_energy
from .learner import Learner, LearnerConfig
from .replay import ReplayBuffer
from .rnd import RNDModule
from .searchers import AugmentedEnergy, SearcherConfig, run_mala, run_search

logger = logging.getLogger(__name__)


def substream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for one labeled component of a run."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


# substream labels (spawn_key prefixes)
_S_DRIFT_INIT = 0
_S_RND_INIT = 1
_S_SEARCH = 2  # (label, round)
_S_TRAIN = 3
_S_BUFFER = 4
_S_EVAL = 5  # (label, eval index)
_S_REINIT = 6  # (label, round)
_S_REFERENCE = 7


@dataclass
class RndConfig:
    hidden_dim: int = 256
    out_dim: int = 64
    predictor_layers: int = 3
    target_layers: int = 3
    lr: float = 5e-4


@dataclass
class RunConfig:
    energy: str = "gmm40"
    seed: int = 0
    out_dir: str | None = None
    n_rounds: int = 2
    inner_iters: int | None = None  # fixed-I override
    learner_energy_budget: int | None = None  # per-round on-policy call budget
    alpha: float = 100.0
    replay_capacity: int = 600_000
    replay_rank_k: float = 0.01
    eval_every: int = 100
    eval_n: int = 1000
    searcher: SearcherConfig = field(default_factory=SearcherConfig)
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    rnd: RndConfig = field(default_factory=RndConfig)
    # ablations
    disable_rnd: bool = False
    finetune_instead_of_reinit: bool = False
    reinit_log_z: bool = False
    # reference chain for targets without an exact sampler (the LJ clusters)
    ref_chains: int = 16
    ref_steps: int = 3000
    ref_burn_in: int = 1500
    ref_step_size: float = 1e-5

    def iterations_per_round(self) -> int:
        """Fixed I if given, else derived from the per-round energy budget.

        Only on-policy iterations spend energy calls (batch_size each);
        replayed iterations are free. Each cycle of replay_ratio + 1
        iterations contains one on-policy step, so a budget of C calls
        funds (replay_ratio + 1) * C / batch_size iterations.
        """
        if self.inner_iters is not None:
            if self.inner_iters < 1:
                raise ValueError("inner_iters must be positive")
            return self.inner_iters
        if self.learner_energy_budget is not None:
            per = max(1, self.learner_energy_budget // self.learner.batch_size)
            return (self.learner.replay_ratio + 1) * per
        raise ValueError("set inner_iters or learner_energy_budget")


@dataclass
class EnergyLedger:
    searcher_calls: int = 0
    learner_calls: int = 0
    eval_calls: int = 0

    @property
    def total(self) -> int:
        return self.searcher_calls + self.learner_calls + self.eval_calls

    def as_dict(self) -> dict:
        return {
            "searcher_calls": self.searcher_calls,
            "learner_calls": self.learner_calls,
            "eval_calls": self.eval_calls,
            "total": self.total,
        }


@dataclass
class PipelineResult:
    config: RunConfig
    records: list[M.MetricsRecord]
    ledger: EnergyLedger
    search_summaries: list[dict]
    learner: Learner
    model: object
    buffer: ReplayBuffer
    rnd: RNDModule | None
    out_dir: Path | None

    def final(self, k: int = 10) -> dict:
        """Moving average of the last up-to-k evaluation records."""
        tail = self.records[-k:]
        if not tail:
            return {}
        return {
            "elbo": float(np.mean([r.elbo for r in tail])),
            "eubo": float(np.mean([r.eubo for r in tail])),
            "gap": float(np.mean([r.gap for r in tail])),
            "log_z_theta": float(tail[-1].log_z_theta),
            "n_evals_averaged": len(tail),
        }


def write_samples_csv(path, x: np.ndarray, energies: np.ndarray | None = None):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    cols = [f"x_{i + 1}" for i in range(x.shape[1])]
    body = x
    if energies is not None:
        cols.append("energy")
        body = np.column_stack([x, np.asarray(energies, dtype=np.float64)])
    header = ",".join(cols)
    np.savetxt(path, body, delimiter=",", header=header, comments="", fmt="%.17g")


class _Evaluator:
    """Shared bound evaluation with per-call eval RNG substreams."""

    def __init__(self, config: RunConfig, model, ledger: EnergyLedger):
        self.config = config
        self.model = model
        self.ledger = ledger
        self.n_evals = 0
        self._ref_x: np.ndarray | None = None
        self._ref_e: np.ndarray | None = None

    def _ensure_reference(self):
        if self._ref_x is not None or self.model.has_oracle:
            return
        cfg = self.config
        logger.info("building reference chain for %s", self.model.name)
        # runs inside evaluate()'s delta window, which already charges
        # these calls to the eval bucket; accruing here would double-count
        res = run_mala(
            self.model,
            SearcherConfig(
                kind="mala",
                n_chains=cfg.ref_chains,
                chain_length=cfg.ref_steps,
                burn_in=cfg.ref_burn_in,
                step_size=cfg.ref_step_size,
                prior_std=cfg.searcher.prior_std,
            ),
            substream(cfg.seed, _S_REFERENCE),
        )
        self._ref_x, self._ref_e = res.samples, res.energies

    def targets(self, n: int, rng: np.random.Generator):
        """(samples, energies) from the oracle or the reference pool."""
        if self.model.has_oracle:
            x = self.model.oracle_sample(n, rng)
            return x, self.model.energy(x)
        self._ensure_reference()
        idx = rng.integers(0, self._ref_x.shape[0], size=n)
        return self._ref_x[idx], self._ref_e[idx]

    def evaluate(
        self, lrn: Learner, step: int, round_idx: int, t0: float
    ) -> M.MetricsRecord:
        cfg = self.config
        before = self.model.counter.total
        rng = substream(cfg.seed, _S_EVAL, self.n_evals)
        self.n_evals += 1
        lo, x1, e_roll = M.elbo_terminals(lrn, cfg.eval_n, rng)
        tx, te = self.targets(cfg.eval_n, rng)
        hi = M.eubo(lrn, tx, rng)
        w2 = M.energy_w2(e_roll, te) if e_roll.size else None
        self.ledger.eval_calls += self.model.counter.total - before
        return M.MetricsRecord(
            step=step,
            round=round_idx,
            elbo=lo.value,
            eubo=hi.value,
            elbo_se=lo.se,
            eubo_se=hi.se,
            gap=hi.value - lo.value,
            log_z_theta=float(lrn.params.log_z),
            energy_w2=w2,
            cumulative_energy_calls=self.ledger.searcher_calls
            + self.ledger.learner_calls,
            cumulative_eval_calls=self.ledger.eval_calls,
            wall_time_s=time.perf_counter() - t0,
        )


def run_pipeline(config: RunConfig) -> PipelineResult:
    t0 = time.perf_counter()
    model = make_energy(config.energy)
    ledger = EnergyLedger()
    lrn = Learner(model, config.learner, substream(config.seed, _S_DRIFT_INIT))
    rnd = None
    if not config.disable_rnd:
        rnd = RNDModule(
            model.dim,
            hidden_dim=config.rnd.hidden_dim,
            out_dim=config.rnd.out_dim,
            predictor_layers=config.rnd.predictor_layers,
            target_layers=config.rnd.target_layers,
            lr=config.rnd.lr,
            rng=substream(config.seed, _S_RND_INIT),
        )
    buffer = ReplayBuffer(config.replay_capacity, model.dim, config.replay_rank_k)
    evaluator = _Evaluator(config, model, ledger)

    out_dir = None
    metrics_path = None
    if config.out_dir is not None:
        out_dir = Path(config.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics_path = out_dir / "metrics.jsonl"
        metrics_path.write_text("")  # truncate previous runs

    records: list[M.MetricsRecord] = []
    search_summaries: list[dict] = []
    train_rng = substream(config.seed, _S_TRAIN)
    buffer_rng = substream(config.seed, _S_BUFFER)
    step = 0

    def run_eval(round_idx):
        rec = evaluator.evaluate(lrn, step, round_idx, t0)
        records.append(rec)
        if metrics_path is not None:
            M.append_jsonl(metrics_path, rec)
        logger.info(
            "step %d round %d elbo %.3f eubo %.3f gap %.3f logZ %.3f",
            rec.step, rec.round, rec.elbo, rec.eubo, rec.gap, rec.log_z_theta,
        )

    for round_idx in range(1, config.n_rounds + 1):
        search_energy = model
        if round_idx > 1 and rnd is not None:
            search_energy = AugmentedEnergy(model, rnd, config.alpha)
        before = model.counter.total
        result = run_search(
            search_energy, config.searcher, substream(config.seed, _S_SEARCH, round_idx)
        )
        ledger.searcher_calls += model.counter.total - before
        buffer.insert(result.samples, result.energies)
        if round_idx == 1:
            lrn.params.log_z = result.log_z_hat
        search_summaries.append(
            {
                "round": round_idx,
                "augmented": search_energy is not model,
                "n_samples": int(result.samples.shape[0]),
                "log_z_hat": result.log_z_hat,
                "estimator_kind": result.estimator_kind,
                "accept_rate": result.accept_rate,
                "energy_calls": result.energy_calls,
                "n_divergent": result.n_divergent,
                "buffer_size": len(buffer),
            }
        )

        iters = config.iterations_per_round()
        # one on-policy step per cycle of replay_ratio + 1 iterations; the
        # literal convention puts it at the cycle end, the flip at the start
        cycle = config.learner.replay_ratio + 1
        on_phase = 1 if config.learner.on_policy_first else 0
        for i in range(1, iters + 1):
            on_policy = i % cycle == on_phase
            mode = "on_policy" if on_policy else "off_policy"
            before = model.counter.total
            lrn.train_step(mode, train_rng, buffer=buffer, rnd=rnd, buffer_rng=buffer_rng)
            ledger.learner_calls += model.counter.total - before
            step += 1
            if step % config.eval_every == 0:
                run_eval(round_idx)

        if out_dir is not None:
            nn.save_checkpoint(out_dir / f"checkpoint_round{round_idx}.bin", lrn.params)
        if round_idx < config.n_rounds and not config.finetune_instead_of_reinit:
            lrn.reinitialize(substream(config.seed, _S_REINIT, round_idx))
            if config.reinit_log_z:
                lrn.reset_log_z(0.0)

    if not records or records[-1].step != step:
        run_eval(config.n_rounds)

    if out_dir is not None:
        nn.save_checkpoint(out_dir / "checkpoint_final.bin", lrn.params)
        buffer.save_csv(out_dir / "buffer.csv")
        (out_dir / "ledger.json").write_text(
            json.dumps(
                {
                    **ledger.as_dict(),
                    "model_counter": model.counter.total,
                    "search_rounds": search_summaries,
                },
                indent=2,
            )
        )

    assert ledger.total == model.counter.total, "energy-call ledger out of balance"
    return PipelineResult(
        config=config,
        records=records,
        ledger=ledger,
        search_summaries=search_summaries,
        learner=lrn,
        model=model,
        buffer=buffer,
        rnd=rnd,
        out_dir=out_dir,
    )
