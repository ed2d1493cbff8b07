"""Diffusion sampler trained with the trajectory-balance objective.

The sampler is a discretized SDE on the unit time horizon: T uniform
steps of size dt = 1/T starting from x_0 = 0,

    x_{t+dt} = x_t + u(x_t, t) dt + sigma sqrt(dt) z,   z ~ N(0, I),

with a neural drift u. The drift is expressed in units of the diffusion
scale, u(x, t) = sigma f(x / sigma, t) with f the raw network: targets
whose length scales differ by orders of magnitude then present O(1)
activations and O(1) output weights to the same architecture. The forward
path density P_F is the product of the
per-step Gaussian kernels. The backward policy P_B is fixed, not learned:
the exact time reversal of a pinned Brownian motion from 0, whose
conditional kernels are

    x_{t-dt} | x_t ~ N( x_t (t-dt)/t,  sigma^2 dt (t-dt)/t I ),

with the final step to x_0 = 0 deterministic (zero density contribution).

Training minimizes the trajectory-balance loss

    L = mean_k [ log Z + log P_F(tau_k) - log R(x_1^k) - log P_B(tau_k | x_1^k) ]^2

with R = exp(-E). The gradient treats trajectories as fixed data, flowing
only through log Z and the drift inside log P_F, so the same loss is valid
on trajectories generated by the current policy (on-policy rollouts) or by
the backward policy seeded from replayed buffer states (off-policy).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import nn
from .replay import ReplayBuffer
from .rnd import RNDModule

DIVERGENCE_THRESHOLD = 1e6


@dataclass
class LearnerConfig:
    t_steps: int = 100
    sigma: float = 1.0
    batch_size: int = 300
    off_batch_size: int | None = None  # defaults to batch_size
    lr: float = 5e-4
    log_z_lr: float = 1e-1
    hidden_dim: int = 256
    n_hidden_layers: int = 2
    time_embed_dim: int = 128
    replay_ratio: int = 1  # off-policy (replay) iterations per on-policy one
    on_policy_first: bool = False  # flips the inner-loop parity

    def __post_init__(self):
        if self.t_steps < 1:
            raise ValueError("need at least one time step")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.replay_ratio < 1:
            raise ValueError("replay_ratio must be at least 1")

    @property
    def dt(self) -> float:
        return 1.0 / self.t_steps

    @property
    def off_batch(self) -> int:
        return self.off_batch_size if self.off_batch_size else self.batch_size


@dataclass
class TrajectoryBatch:
    """States of B trajectories on the shared time grid, plus validity flags."""

    states: np.ndarray  # (B, T+1, dim)
    sigma: float
    valid: np.ndarray  # (B,) divergence guard verdict

    @property
    def batch(self) -> int:
        return self.states.shape[0]

    @property
    def t_steps(self) -> int:
        return self.states.shape[1] - 1

    @property
    def dt(self) -> float:
        return 1.0 / self.t_steps

    @property
    def terminal(self) -> np.ndarray:
        return self.states[:, -1, :]


@lru_cache(maxsize=8)
def _emb_grid(t_steps: int, k: int) -> np.ndarray:
    # drift is evaluated at step starts t_i = i / T, i = 0..T-1
    t = np.arange(t_steps) / t_steps
    return nn.time_embedding(t, k)


def forward_rollout(
    store: nn.ParamStore,
    n: int,
    t_steps: int,
    sigma: float,
    rng: np.random.Generator,
) -> TrajectoryBatch:
    """Sample n trajectories from the current forward policy."""
    traj, _ = _rollout(store, n, t_steps, sigma, rng, collect=False)
    return traj


@dataclass
class RolloutCache:
    """Activations of every drift evaluation of a rollout, in step-major order.

    Row i * B + b holds trajectory b at step i, matching nn's cache layout,
    so the TB gradient can run its backward pass without a second forward.
    Only meaningful for the parameters that produced the rollout.
    """

    cache: tuple
    drifts: np.ndarray  # (T, B, dim)


def _rollout(store, n, t_steps, sigma, rng, collect):
    spec = store.spec
    dim = spec.in_dim
    dt = 1.0 / t_steps
    root = sigma * np.sqrt(dt)
    pairs = store.weights()
    dims = spec.layer_dims()
    k = spec.time_embed_dim
    emb = _emb_grid(t_steps, k) if k else None

    ins = pre = phi = drifts = None
    if collect:
        rows = t_steps * n
        ins = [np.empty((rows, fi)) for fi, _ in dims]
        pre = [np.empty((rows, fo)) for _, fo in dims[:-1]]
        phi = [np.empty((rows, fo)) for _, fo in dims[:-1]]
        drifts = np.empty((t_steps, n, dim))

    inv = 1.0 / sigma
    states = np.empty((n, t_steps + 1, dim))
    x = np.zeros((n, dim))
    states[:, 0] = x
    for i in range(t_steps):
        if k:
            h = np.concatenate([x * inv, np.broadcast_to(emb[i], (n, k))], axis=1)
        else:
            h = x * inv
        sl = slice(i * n, (i + 1) * n)
        for layer, (w, b) in enumerate(pairs):
            if collect:
                ins[layer][sl] = h
            z = h @ w + b
            if layer < len(pairs) - 1:
                h, big_phi = nn._gelu_fwd(z)
                if collect:
                    pre[layer][sl] = z
                    phi[layer][sl] = big_phi
            else:
                h = z
        u = sigma * h
        if collect:
            drifts[i] = u
        x = x + u * dt + root * rng.standard_normal((n, dim))
        states[:, i + 1] = x
    with np.errstate(invalid="ignore"):
        valid = np.all(np.isfinite(states), axis=(1, 2)) & (
            np.nanmax(np.abs(states), axis=(1, 2)) <= DIVERGENCE_THRESHOLD
        )
    traj = TrajectoryBatch(states, sigma, valid)
    rc = RolloutCache((ins, pre, phi), drifts) if collect else None
    return traj, rc


def backward_rollout(
    x1: np.ndarray, t_steps: int, sigma: float, rng: np.random.Generator
) -> TrajectoryBatch:
    """Sample bridge trajectories ending at the given terminal states.

    Walks the pinned-bridge kernels from t = 1 down to t = dt, then places
    x_0 = 0 exactly (the deterministic final step).
    """
    x1 = np.atleast_2d(np.asarray(x1, dtype=np.float64))
    n, dim = x1.shape
    dt = 1.0 / t_steps
    states = np.empty((n, t_steps + 1, dim))
    states[:, t_steps] = x1
    x = x1
    for i in range(t_steps, 1, -1):
        shrink = (i - 1) / i
        std = sigma * np.sqrt(dt * shrink)
        x = x * shrink + std * rng.standard_normal((n, dim))
        states[:, i - 1] = x
    states[:, 0] = 0.0
    valid = np.all(np.isfinite(states), axis=(1, 2))
    return TrajectoryBatch(states, sigma, valid)


def _gauss_logpdf_sum(resid: np.ndarray, var: float) -> np.ndarray:
    # sum over the last axis of log N(resid; 0, var)
    d = resid.shape[-1]
    return -np.sum(resid * resid, axis=-1) / (2.0 * var) - 0.5 * d * np.log(
        2.0 * np.pi * var
    )


def log_pb(traj: TrajectoryBatch) -> np.ndarray:
    """log P_B(tau | x_1) under the pinned bridge, (B,).

    The i = 1 step is deterministic and contributes zero; perturbing x_0
    away from 0 therefore does not change the value, trajectories with
    x_0 != 0 simply have probability zero under the bridge and must not be
    scored here.
    """
    states = traj.states
    T = traj.t_steps
    dt = traj.dt
    out = np.zeros(traj.batch)
    for i in range(T, 1, -1):
        shrink = (i - 1) / i
        resid = states[:, i - 1] - states[:, i] * shrink
        out += _gauss_logpdf_sum(resid, traj.sigma**2 * dt * shrink)
    return out


def _flat_inputs(traj: TrajectoryBatch):
    """All (state, time) drift inputs of a batch as one (B*T, dim) matrix."""
    B, Tp1, dim = traj.states.shape
    T = Tp1 - 1
    x = traj.states[:, :T, :].reshape(B * T, dim)
    return x, B, T, dim


def _mega_t_feat(store: nn.ParamStore, B: int, T: int):
    k = store.spec.time_embed_dim
    if k == 0:
        return None
    return np.tile(_emb_grid(T, k), (B, 1))


def log_pf(store: nn.ParamStore, traj: TrajectoryBatch) -> np.ndarray:
    """log P_F(tau; theta) of each trajectory under the current drift, (B,)."""
    x, B, T, dim = _flat_inputs(traj)
    u = traj.sigma * nn.forward(
        store, x / traj.sigma, t_feat=_mega_t_feat(store, B, T)
    ).reshape(B, T, dim)
    resid = traj.states[:, 1:, :] - traj.states[:, :-1, :] - u * traj.dt
    var = traj.sigma**2 * traj.dt
    return np.sum(_gauss_logpdf_sum(resid, var), axis=1)


@dataclass
class TBResult:
    loss: float
    grad_params: np.ndarray | None
    grad_log_z: float | None
    log_ratio: np.ndarray  # (B,) per-trajectory balance residuals, nan if dropped
    n_used: int
    n_dropped: int


def tb_loss(
    store: nn.ParamStore,
    traj: TrajectoryBatch,
    energies: np.ndarray,
    need_grad: bool = True,
    rollout_cache: RolloutCache | None = None,
) -> TBResult:
    """Trajectory-balance loss and its exact gradient over a fixed batch.

    ``energies`` are E(x_1) per trajectory (R = exp(-E)). Trajectories
    flagged divergent, or whose balance residual is non-finite, are dropped
    from the mean; the loss averages over the survivors. A ``rollout_cache``
    produced by the same parameters on the same trajectories skips the
    recomputation of the drift; it is ignored when any trajectory diverged,
    because the cached activations of divergent rows are garbage.
    """
    energies = np.asarray(energies, dtype=np.float64)
    B, T, dim = traj.batch, traj.t_steps, traj.states.shape[2]
    all_valid = bool(np.all(traj.valid))
    use_cache = rollout_cache is not None and all_valid

    step_major = use_cache
    if use_cache:
        cache = rollout_cache.cache
        u = rollout_cache.drifts.transpose(1, 0, 2)  # (B, T, dim)
    else:
        x, B, T, dim = _flat_inputs(traj)
        if not all_valid:
            # zero divergent rows so their garbage cannot reach backward
            x = np.where(np.repeat(traj.valid, T)[:, None], x, 0.0)
        t_feat = _mega_t_feat(store, B, T)
        if need_grad:
            u_flat, cache = nn.forward_cached(store, x / traj.sigma, t_feat=t_feat)
        else:
            u_flat = nn.forward(store, x / traj.sigma, t_feat=t_feat)
        u = (traj.sigma * u_flat).reshape(B, T, dim)
    var = traj.sigma**2 * traj.dt
    with np.errstate(invalid="ignore", over="ignore"):
        resid = traj.states[:, 1:, :] - traj.states[:, :-1, :] - u * traj.dt
        lpf = np.sum(_gauss_logpdf_sum(resid, var), axis=1)
        lpb = log_pb(traj)
        ratio = store.log_z + lpf + energies - lpb
        keep = traj.valid & np.isfinite(ratio)
    n_used = int(keep.sum())
    n_dropped = B - n_used
    if n_used == 0:
        nanvec = np.full(B, np.nan)
        return TBResult(float("nan"), None, None, nanvec, 0, n_dropped)

    kept_ratio = np.where(keep, ratio, 0.0)
    loss = float(np.sum(kept_ratio**2) / n_used)
    log_ratio = np.where(keep, ratio, np.nan)
    if not need_grad:
        return TBResult(loss, None, None, log_ratio, n_used, n_dropped)

    grad_log_z = float(2.0 * np.sum(kept_ratio) / n_used)
    # dL/du_{k,i} = (2 l_k / n) * resid_{k,i} / sigma^2, zero for dropped rows
    weight = np.where(keep, 2.0 * kept_ratio / n_used, 0.0)
    with np.errstate(invalid="ignore", over="ignore"):
        raw_up = weight[:, None, None] * resid / traj.sigma**2
    upstream = np.where(keep[:, None, None], raw_up, 0.0)
    if step_major:
        upstream = upstream.transpose(1, 0, 2)  # cache rows are step-major
    # the cached activations belong to the raw net; chain through the sigma gain
    grad_params, _ = nn.backward(
        store, cache, (traj.sigma * upstream).reshape(B * T, dim), wrt_input=False
    )
    return TBResult(loss, grad_params, grad_log_z, log_ratio, n_used, n_dropped)


@dataclass
class StepRecord:
    mode: str  # "on_policy" | "off_policy"
    loss: float
    log_z: float
    n_used: int
    n_dropped: int
    applied: bool  # False when the optimizer skipped a non-finite gradient


class Learner:
    """Drift network, log Z scalar, and their optimizers, bound to one model."""

    def __init__(self, model, config: LearnerConfig, rng: np.random.Generator):
        self.model = model
        self.config = config
        self.spec = nn.MlpSpec(
            in_dim=model.dim,
            hidden_dim=config.hidden_dim,
            out_dim=model.dim,
            n_hidden_layers=config.n_hidden_layers,
            time_embed_dim=config.time_embed_dim,
            zero_init_output=True,
        )
        self.params = nn.init_params(self.spec, rng)
        self.adam = nn.AdamState(self.spec.n_params, lr=config.lr)
        self.adam_log_z = nn.AdamState(1, lr=config.log_z_lr)
        self.n_reinits = 0

    # -- sampling ------------------------------------------------------------

    def rollout(self, n: int, rng: np.random.Generator) -> TrajectoryBatch:
        return forward_rollout(
            self.params, n, self.config.t_steps, self.config.sigma, rng
        )

    def bridge_from(self, x1: np.ndarray, rng: np.random.Generator) -> TrajectoryBatch:
        return backward_rollout(x1, self.config.t_steps, self.config.sigma, rng)

    def sample_terminal(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.rollout(n, rng).terminal

    # -- training ------------------------------------------------------------

    def _apply(self, tb: TBResult) -> bool:
        if tb.grad_params is None:
            return False
        ok = self.adam.step(self.params.values, tb.grad_params)
        if ok:
            lz = np.array([self.params.log_z])
            if self.adam_log_z.step(lz, np.array([tb.grad_log_z])):
                self.params.log_z = float(lz[0])
        return ok

    def train_step(
        self,
        mode: str,
        rng: np.random.Generator,
        buffer: ReplayBuffer | None = None,
        rnd: RNDModule | None = None,
        buffer_rng: np.random.Generator | None = None,
    ) -> StepRecord:
        """One TB update plus (optionally) one RND predictor step.

        On-policy: fresh forward rollouts, terminal energies evaluated on
        the model (counted). Off-policy: terminal states drawn from the
        replay buffer with their stored energies, bridged backward, no new
        energy evaluations.
        """
        cfg = self.config
        rollout_cache = None
        if mode == "on_policy":
            traj, rollout_cache = _rollout(
                self.params, cfg.batch_size, cfg.t_steps, cfg.sigma, rng, collect=True
            )
            x1 = traj.terminal
            safe = traj.valid
            energies = np.full(traj.batch, np.inf)
            if np.any(safe):
                energies[safe] = self.model.energy(x1[safe])
            train_x = x1[safe]
        elif mode == "off_policy":
            if buffer is None:
                raise ValueError("off-policy step needs a replay buffer")
            draw_rng = buffer_rng if buffer_rng is not None else rng
            x1, energies = buffer.sample_rank_based(cfg.off_batch, draw_rng)
            traj = self.bridge_from(x1, rng)
            train_x = x1
        else:
            raise ValueError(f"unknown mode {mode!r}")

        tb = tb_loss(self.params, traj, energies, rollout_cache=rollout_cache)
        applied = self._apply(tb)
        if rnd is not None and train_x.shape[0] > 0:
            rnd.train_predictor(train_x)
        return StepRecord(
            mode=mode,
            loss=tb.loss,
            log_z=float(self.params.log_z),
            n_used=tb.n_used,
            n_dropped=tb.n_dropped,
            applied=applied,
        )

    def reinitialize(self, rng: np.random.Generator) -> None:
        """Fresh drift parameters and moments; log Z keeps value and moments."""
        log_z = self.params.log_z
        self.params = nn.init_params(self.spec, rng)
        self.params.log_z = log_z
        self.adam = nn.AdamState(self.spec.n_params, lr=self.config.lr)
        self.n_reinits += 1

    def reset_log_z(self, value: float = 0.0) -> None:
        self.params.log_z = float(value)
        self.adam_log_z = nn.AdamState(1, lr=self.config.log_z_lr)
