"""Unit tests for the log Z bounds and the energy transport distance."""

import json

import numpy as np
import pytest

from searchdiff import learner as L
from searchdiff import metrics as M
from searchdiff.energies.base import GaussianEnergy


def balanced_learner(sigma=1.4, d=2, t_steps=10, seed=0):
    """Learner in exact balance with its Gaussian target."""
    model = GaussianEnergy(d, std=sigma)
    cfg = L.LearnerConfig(
        t_steps=t_steps, sigma=sigma, batch_size=8, hidden_dim=6, time_embed_dim=4
    )
    lrn = L.Learner(model, cfg, np.random.default_rng(seed))
    lrn.params.log_z = model.log_partition
    return lrn, model


def test_exact_balance_bounds_equal_log_z():
    # zero drift matched to the target: l(tau) = log Z for every trajectory
    lrn, model = balanced_learner()
    rng = np.random.default_rng(1)
    lo = M.elbo(lrn, 300, rng)
    hi = M.eubo(lrn, model.oracle_sample(300, rng), rng)
    assert lo.value == pytest.approx(model.log_partition, abs=1e-10)
    assert hi.value == pytest.approx(model.log_partition, abs=1e-10)
    assert lo.se < 1e-12
    assert hi.se < 1e-12
    assert lo.n == hi.n == 300


def test_bounds_sandwich_log_z_for_untrained_drift():
    # untrained (zero) drift with mismatched sigma: ELBO < log Z < EUBO
    model = GaussianEnergy(1, std=1.0)
    cfg = L.LearnerConfig(
        t_steps=16, sigma=1.5, batch_size=8, hidden_dim=6, time_embed_dim=4
    )
    lrn = L.Learner(model, cfg, np.random.default_rng(2))
    rng = np.random.default_rng(3)
    lo = M.elbo(lrn, 4000, rng)
    hi = M.eubo(lrn, model.oracle_sample(4000, rng), rng)
    true = model.log_partition
    assert lo.value + 3 * lo.se < true  # strictly below for a bad sampler
    assert hi.value - 3 * hi.se > true
    assert lo.value < hi.value


def test_elbo_terminals_returns_matching_pool():
    lrn, model = balanced_learner(seed=4)
    bound, x1, e = M.elbo_terminals(lrn, 700, np.random.default_rng(5))
    assert bound.n == 700
    assert x1.shape == (700, 2)
    np.testing.assert_allclose(e, model.energy(x1), rtol=1e-12)


def test_chunking_does_not_change_the_estimate():
    lrn, model = balanced_learner(seed=6)
    # 700 forces an uneven final chunk; exactness makes the check sharp
    bound = M.elbo(lrn, 700, np.random.default_rng(7))
    assert bound.value == pytest.approx(model.log_partition, abs=1e-10)


def test_energy_w2_identical_samples_zero():
    a = np.random.default_rng(8).standard_normal(100)
    assert M.energy_w2(a, a.copy()) == 0.0


def test_energy_w2_point_masses():
    a = np.zeros(10)
    b = np.full(10, 3.0)
    assert M.energy_w2(a, b) == pytest.approx(3.0)


def test_energy_w2_equal_counts_sorted_rms():
    rng = np.random.default_rng(9)
    a, b = rng.standard_normal(64), rng.standard_normal(64)
    expect = np.sqrt(np.mean((np.sort(a) - np.sort(b)) ** 2))
    assert M.energy_w2(a, b) == pytest.approx(expect, rel=1e-12)


def test_energy_w2_unequal_counts_shift_invariance():
    rng = np.random.default_rng(10)
    a = rng.standard_normal(1000)
    b = a[:400] + 2.0  # same shape shifted; quantile paths differ by ~2
    assert M.energy_w2(a, b) == pytest.approx(2.0, abs=0.15)


def test_energy_w2_metric_properties():
    rng = np.random.default_rng(11)
    a, b, c = (rng.standard_normal(128) * s for s in (1.0, 2.0, 0.5))
    dab, dba = M.energy_w2(a, b), M.energy_w2(b, a)
    assert dab == pytest.approx(dba, rel=1e-12)  # symmetry
    assert M.energy_w2(a, c) <= dab + M.energy_w2(b, c) + 1e-12  # triangle
    with pytest.raises(ValueError):
        M.energy_w2(a, np.array([]))


def test_metrics_record_serialization(tmp_path):
    rec = M.MetricsRecord(
        step=10, round=1, elbo=-1.5, eubo=0.5, elbo_se=0.1, eubo_se=0.2,
        gap=2.0, log_z_theta=0.0, energy_w2=None,
        cumulative_energy_calls=1000, cumulative_eval_calls=200,
        wall_time_s=12.345,
    )
    line = rec.to_json_line()
    d = json.loads(line)
    assert "wall_time_s" not in d  # nondeterministic field stays out of the file
    assert d["elbo"] == -1.5
    assert d["energy_w2"] is None
    path = tmp_path / "metrics.jsonl"
    M.append_jsonl(path, rec)
    M.append_jsonl(path, rec)
    lines = path.read_text().splitlines()
    assert lines == [line, line]


def test_metrics_record_nonfinite_to_null():
    rec = M.MetricsRecord(
        step=0, round=1, elbo=float("nan"), eubo=float("inf"), elbo_se=0.0,
        eubo_se=0.0, gap=float("nan"), log_z_theta=0.0, energy_w2=1.0,
        cumulative_energy_calls=0, cumulative_eval_calls=0, wall_time_s=0.0,
    )
    d = json.loads(rec.to_json_line())
    assert d["elbo"] is None
    assert d["eubo"] is None
    assert d["gap"] is None
