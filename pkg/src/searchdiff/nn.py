"""Minimal feed-forward networks on flat float64 parameter vectors.

Implements exactly what the samplers need and nothing more: an MLP with
GELU hidden activations and a linear output head, optional sinusoidal
time features appended to the input, reverse-mode gradients with respect
to both parameters and inputs, Adam, and a binary checkpoint format.

All math is done in float64 numpy. Gradients are hand-derived so that
they can be checked against finite differences to tight tolerances.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

logger = logging.getLogger(__name__)

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)

CHECKPOINT_MAGIC = b"SDNN"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class MlpSpec:
    """Architecture of an MLP: in_dim -> hidden (x n_hidden_layers) -> out_dim.

    ``n_hidden_layers`` counts hidden layers, each followed by GELU; the
    output layer is linear. If ``time_embed_dim`` > 0 the network input is
    concat(x, time_embedding(t)) and callers must pass a time argument.
    """

    in_dim: int
    hidden_dim: int
    out_dim: int
    n_hidden_layers: int = 2
    time_embed_dim: int = 0
    zero_init_output: bool = False

    def __post_init__(self):
        if self.in_dim < 1 or self.hidden_dim < 1 or self.out_dim < 1:
            raise ValueError("all dimensions must be positive")
        if self.n_hidden_layers < 1:
            raise ValueError("need at least one hidden layer")
        if self.time_embed_dim < 0 or self.time_embed_dim % 2 != 0:
            raise ValueError("time_embed_dim must be a nonnegative even integer")

    @property
    def input_width(self) -> int:
        return self.in_dim + self.time_embed_dim

    def layer_dims(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) for every linear layer, input to output."""
        dims = [(self.input_width, self.hidden_dim)]
        for _ in range(self.n_hidden_layers - 1):
            dims.append((self.hidden_dim, self.hidden_dim))
        dims.append((self.hidden_dim, self.out_dim))
        return dims

    @property
    def n_params(self) -> int:
        return sum(fi * fo + fo for fi, fo in self.layer_dims())


def time_embedding(t, k: int) -> np.ndarray:
    """Sinusoidal features [sin(2 pi f_j t), cos(2 pi f_j t)], f_j = 1..k/2.

    ``t`` may be a scalar or an array; the feature axis (length k) is
    appended. Frequencies are integers so t = 0 and t = 1 embed to the
    same point, which is fine: trajectories never evaluate the drift at
    t = 1.
    """
    if k % 2 != 0:
        raise ValueError("embedding size must be even")
    t = np.asarray(t, dtype=np.float64)
    freqs = np.arange(1, k // 2 + 1, dtype=np.float64)
    ang = 2.0 * np.pi * t[..., None] * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)


@dataclass
class ParamStore:
    """Flat float64 parameter vector plus layout, with an optional log_z scalar.

    ``values`` owns all weights and biases; ``layout`` maps a layer name to
    an (offset, shape) pair, in a deterministic order derived from the spec.
    ``log_z`` is the scalar log partition estimate trained alongside the
    drift network; modules that do not need it leave it at 0 and ignore it.
    """

    spec: MlpSpec
    values: np.ndarray
    log_z: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.spec.n_params,):
            raise ValueError(
                f"expected {self.spec.n_params} parameters, got {self.values.shape}"
            )

    def _slices(self):
        # [(w_offset, w_shape, b_offset, b_shape), ...] per layer
        out = []
        off = 0
        for fi, fo in self.spec.layer_dims():
            out.append((off, (fi, fo), off + fi * fo, (fo,)))
            off += fi * fo + fo
        return out

    def weights(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """(W, b) views into the flat vector, one pair per linear layer."""
        out = []
        for w_off, w_shape, b_off, b_shape in self._slices():
            w = self.values[w_off : w_off + w_shape[0] * w_shape[1]].reshape(w_shape)
            b = self.values[b_off : b_off + b_shape[0]]
            out.append((w, b))
        return out

    def copy(self) -> "ParamStore":
        return ParamStore(self.spec, self.values.copy(), self.log_z)


def init_params(spec: MlpSpec, rng: np.random.Generator) -> ParamStore:
    """Variance-preserving uniform init, biases zero.

    Hidden-layer weights are drawn from U(-a, a) with a = sqrt(6 / (fan_in
    + fan_out)). With ``zero_init_output`` the output layer starts at zero
    so the network is the zero function initially.
    """
    values = np.zeros(spec.n_params, dtype=np.float64)
    store = ParamStore(spec, values)
    dims = spec.layer_dims()
    for i, ((w, b), (fi, fo)) in enumerate(zip(store.weights(), dims)):
        is_output = i == len(dims) - 1
        if is_output and spec.zero_init_output:
            continue
        a = np.sqrt(6.0 / (fi + fo))
        w[:] = rng.uniform(-a, a, size=(fi, fo))
    return store


def _gelu_fwd(z: np.ndarray):
    # exact GELU z * Phi(z); Phi is cached because erf dominates the cost
    big_phi = 0.5 * (1.0 + erf(z / _SQRT2))
    return z * big_phi, big_phi


def _gelu_grad(z: np.ndarray, big_phi: np.ndarray) -> np.ndarray:
    return big_phi + z * _INV_SQRT_2PI * np.exp(-0.5 * z * z)


def _assemble_input(spec: MlpSpec, x: np.ndarray, t, t_feat) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if spec.time_embed_dim == 0:
        return x
    if t_feat is None:
        if t is None:
            raise ValueError("network has time features, pass t or t_feat")
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (x.shape[0],))
        t_feat = time_embedding(t, spec.time_embed_dim)
    if t_feat.shape != (x.shape[0], spec.time_embed_dim):
        raise ValueError("t_feat shape mismatch")
    return np.concatenate([x, t_feat], axis=1)


def forward(store: ParamStore, x: np.ndarray, t=None, t_feat=None) -> np.ndarray:
    """Batched forward pass. x: (B, in_dim) -> (B, out_dim)."""
    y, _ = forward_cached(store, x, t=t, t_feat=t_feat, keep_cache=False)
    return y


def forward_cached(
    store: ParamStore, x: np.ndarray, t=None, t_feat=None, keep_cache: bool = True
):
    """Forward pass returning (output, cache) where cache feeds backward()."""
    spec = store.spec
    h = _assemble_input(spec, x, t, t_feat)
    pairs = store.weights()
    inputs = []  # activation entering each linear layer
    preacts = []  # pre-activation of each hidden layer
    phis = []  # Phi(preact), reused by the backward pass
    for i, (w, b) in enumerate(pairs):
        if keep_cache:
            inputs.append(h)
        z = h @ w + b
        if i < len(pairs) - 1:
            h, big_phi = _gelu_fwd(z)
            if keep_cache:
                preacts.append(z)
                phis.append(big_phi)
        else:
            h = z
    cache = (inputs, preacts, phis) if keep_cache else None
    return h, cache


def backward(
    store: ParamStore,
    cache,
    upstream: np.ndarray,
    wrt_params: bool = True,
    wrt_input: bool = True,
):
    """Reverse-mode pass from d(scalar)/d(output) back to params and inputs.

    ``upstream`` is (B, out_dim). Returns (flat_grad, dx): flat_grad has the
    layout of ParamStore.values (sum over the batch), dx is (B, in_dim), the
    gradient with respect to the x part of the input only. Either may be
    None when not requested.
    """
    spec = store.spec
    inputs, preacts, phis = cache
    pairs = store.weights()
    flat_grad = np.zeros(spec.n_params, dtype=np.float64) if wrt_params else None
    grad_store = ParamStore(spec, flat_grad) if wrt_params else None
    gpairs = grad_store.weights() if wrt_params else None

    delta = np.asarray(upstream, dtype=np.float64)
    for i in range(len(pairs) - 1, -1, -1):
        w, _ = pairs[i]
        if wrt_params:
            gw, gb = gpairs[i]
            gw += inputs[i].T @ delta
            gb += delta.sum(axis=0)
        need_down = i > 0 or wrt_input
        if not need_down:
            break
        delta = delta @ w.T
        if i > 0:
            delta = delta * _gelu_grad(preacts[i - 1], phis[i - 1])
    dx = delta[:, : spec.in_dim] if wrt_input else None
    return flat_grad, dx


def grad_params(store: ParamStore, x, upstream, t=None, t_feat=None) -> np.ndarray:
    """d(sum_B upstream . output)/d(params) as a flat vector."""
    _, cache = forward_cached(store, x, t=t, t_feat=t_feat)
    g, _ = backward(store, cache, upstream, wrt_params=True, wrt_input=False)
    return g


def grad_input(store: ParamStore, x, upstream, t=None, t_feat=None) -> np.ndarray:
    """d(upstream_b . output_b)/d(x_b) per batch row, shape (B, in_dim)."""
    _, cache = forward_cached(store, x, t=t, t_feat=t_feat)
    _, dx = backward(store, cache, upstream, wrt_params=False, wrt_input=True)
    return dx


@dataclass
class AdamState:
    """Adam moments for one parameter array, with bias correction.

    Steps with any non-finite gradient entry are skipped entirely; the skip
    is counted and logged so a bad batch cannot poison the moments.
    """

    n_params: int
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    skipped: int = 0
    m: np.ndarray = field(init=False)
    v: np.ndarray = field(init=False)

    def __post_init__(self):
        self.m = np.zeros(self.n_params, dtype=np.float64)
        self.v = np.zeros(self.n_params, dtype=np.float64)

    def step(self, values: np.ndarray, grad: np.ndarray) -> bool:
        """Update ``values`` in place. Returns False if skipped."""
        grad = np.asarray(grad, dtype=np.float64)
        if not np.all(np.isfinite(grad)):
            self.skipped += 1
            logger.warning("adam: non-finite gradient, step %d skipped", self.t + 1)
            return False
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        mhat = self.m / (1.0 - self.beta1**self.t)
        vhat = self.v / (1.0 - self.beta2**self.t)
        values -= self.lr * mhat / (np.sqrt(vhat) + self.eps)
        return True


def save_checkpoint(path, store: ParamStore) -> None:
    """Binary checkpoint: fixed header, little-endian float64 block, log_z."""
    spec = store.spec
    header = struct.pack(
        "<4sIiiiiii",
        CHECKPOINT_MAGIC,
        CHECKPOINT_VERSION,
        spec.in_dim,
        spec.hidden_dim,
        spec.out_dim,
        spec.n_hidden_layers,
        spec.time_embed_dim,
        1 if spec.zero_init_output else 0,
    )
    with open(path, "wb") as f:
        f.write(header)
        f.write(store.values.astype("<f8").tobytes())
        f.write(struct.pack("<d", float(store.log_z)))


def load_checkpoint(path) -> ParamStore:
    with open(path, "rb") as f:
        raw = f.read()
    head = struct.calcsize("<4sIiiiiii")
    magic, version, in_dim, hidden, out, layers, tdim, zero_out = struct.unpack(
        "<4sIiiiiii", raw[:head]
    )
    if magic != CHECKPOINT_MAGIC:
        raise ValueError("not a checkpoint file")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    spec = MlpSpec(
        in_dim=in_dim,
        hidden_dim=hidden,
        out_dim=out,
        n_hidden_layers=layers,
        time_embed_dim=tdim,
        zero_init_output=bool(zero_out),
    )
    body = raw[head:]
    need = spec.n_params * 8 + 8
    if len(body) != need:
        raise ValueError("checkpoint payload size mismatch")
    values = np.frombuffer(body[:-8], dtype="<f8").astype(np.float64)
    (log_z,) = struct.unpack("<d", body[-8:])
    return ParamStore(spec, values, log_z)
