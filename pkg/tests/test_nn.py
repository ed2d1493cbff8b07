"""Unit tests for the minimal MLP and its reverse-mode gradients."""

import numpy as np
import pytest
from conftest import fd_grad, rel_err

from searchdiff import nn


def small_spec(**kw):
    defaults = dict(in_dim=3, hidden_dim=8, out_dim=3, n_hidden_layers=2, time_embed_dim=4)
    defaults.update(kw)
    return nn.MlpSpec(**defaults)


def test_time_embedding_matches_formula():
    t = np.array([0.0, 0.25, 0.7])
    k = 6
    emb = nn.time_embedding(t, k)
    assert emb.shape == (3, 6)
    freqs = np.array([1.0, 2.0, 3.0])  # integer frequencies 1..k/2
    for j, tv in enumerate(t):
        expect = np.concatenate(
            [np.sin(2 * np.pi * freqs * tv), np.cos(2 * np.pi * freqs * tv)]
        )
        np.testing.assert_allclose(emb[j], expect, atol=1e-15)
    # t = 0 embeds to (0, 0, 0, 1, 1, 1)
    np.testing.assert_allclose(emb[0], [0, 0, 0, 1, 1, 1], atol=0)


def test_time_embedding_rejects_odd_width():
    with pytest.raises(ValueError):
        nn.time_embedding(np.array([0.5]), 5)


def test_param_count_matches_layer_dims():
    spec = small_spec()
    expect = sum(fi * fo + fo for fi, fo in spec.layer_dims())
    assert spec.n_params == expect
    store = nn.init_params(spec, np.random.default_rng(0))
    assert store.values.size == expect


def test_init_glorot_bounds_and_zero_biases():
    spec = small_spec(hidden_dim=16)
    store = nn.init_params(spec, np.random.default_rng(1))
    for (w, b), (fi, fo) in zip(store.weights(), spec.layer_dims()):
        bound = np.sqrt(6.0 / (fi + fo))
        assert np.all(np.abs(w) <= bound)
        assert np.all(b == 0.0)


def test_zero_init_output_gives_zero_forward():
    spec = small_spec(zero_init_output=True)
    store = nn.init_params(spec, np.random.default_rng(2))
    x = np.random.default_rng(3).standard_normal((5, 3))
    t = np.full(5, 0.3)
    out = nn.forward(store, x, t=t)
    assert np.all(out == 0.0)


def test_forward_matches_manual_single_layer():
    # one hidden layer, no time features: out = W2 gelu(W1 x + b1) + b2
    spec = nn.MlpSpec(in_dim=2, hidden_dim=3, out_dim=1, n_hidden_layers=1)
    store = nn.init_params(spec, np.random.default_rng(4))
    (w1, b1), (w2, b2) = store.weights()
    x = np.array([[0.3, -1.2]])
    z = x @ w1 + b1
    from scipy.special import erf

    gelu = z * 0.5 * (1.0 + erf(z / np.sqrt(2.0)))
    expect = gelu @ w2 + b2
    np.testing.assert_allclose(nn.forward(store, x), expect, rtol=1e-15)


def test_grad_params_matches_finite_differences():
    spec = small_spec()
    store = nn.init_params(spec, np.random.default_rng(5))
    rng = np.random.default_rng(6)
    x = rng.standard_normal((4, 3))
    t = rng.uniform(0, 1, size=4)
    upstream = rng.standard_normal((4, 3))

    def loss(values):
        probe = nn.ParamStore(spec, values, log_z=0.0)
        return float(np.sum(nn.forward(probe, x, t=t) * upstream))

    analytic = nn.grad_params(store, x, upstream, t=t)
    numeric = fd_grad(loss, store.values.copy(), h=1e-6)
    assert rel_err(analytic, numeric) < 1e-7


def test_grad_input_matches_finite_differences():
    spec = small_spec()
    store = nn.init_params(spec, np.random.default_rng(7))
    rng = np.random.default_rng(8)
    x = rng.standard_normal((4, 3))
    t = rng.uniform(0, 1, size=4)
    upstream = rng.standard_normal((4, 3))

    def loss(xv):
        return float(np.sum(nn.forward(store, xv, t=t) * upstream))

    analytic = nn.grad_input(store, x, upstream, t=t)
    numeric = fd_grad(loss, x.copy(), h=1e-6)
    assert rel_err(analytic, numeric) < 1e-7


def test_backward_param_and_input_in_one_pass():
    spec = small_spec()
    store = nn.init_params(spec, np.random.default_rng(9))
    rng = np.random.default_rng(10)
    x = rng.standard_normal((6, 3))
    t = rng.uniform(0, 1, size=6)
    upstream = rng.standard_normal((6, 3))
    _, cache = nn.forward_cached(store, x, t=t)
    gp, gx = nn.backward(store, cache, upstream)
    np.testing.assert_allclose(gp, nn.grad_params(store, x, upstream, t=t), rtol=1e-12)
    np.testing.assert_allclose(gx, nn.grad_input(store, x, upstream, t=t), rtol=1e-12)


def test_adam_single_step_matches_reference_formula():
    adam = nn.AdamState(n_params=3, lr=0.1)
    values = np.array([1.0, -2.0, 0.5])
    grad = np.array([0.3, -0.1, 0.0])
    expect = values - 0.1 * grad / (np.abs(grad) + 1e-8)  # first step: m_hat/sqrt(v_hat) = sign
    applied = adam.step(values, grad)
    assert applied
    np.testing.assert_allclose(values, expect, rtol=1e-9)
    assert adam.t == 1


def test_adam_skips_nonfinite_gradient():
    adam = nn.AdamState(n_params=2, lr=0.1)
    values = np.array([1.0, 1.0])
    before = values.copy()
    applied = adam.step(values, np.array([np.nan, 0.0]))
    assert not applied
    assert adam.skipped == 1
    assert adam.t == 0
    np.testing.assert_array_equal(values, before)


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    spec = small_spec(zero_init_output=True)
    store = nn.init_params(spec, np.random.default_rng(11))
    store.values[:] = np.random.default_rng(12).standard_normal(store.values.size)
    store.log_z = 3.14159
    path = tmp_path / "model.bin"
    nn.save_checkpoint(path, store)
    loaded = nn.load_checkpoint(path)
    assert loaded.spec == spec
    assert loaded.log_z == store.log_z
    np.testing.assert_array_equal(loaded.values, store.values)


def test_checkpoint_rejects_corrupt_header(tmp_path):
    path = tmp_path / "model.bin"
    path.write_bytes(b"XXXX" + b"\x00" * 64)
    with pytest.raises(ValueError):
        nn.load_checkpoint(path)
