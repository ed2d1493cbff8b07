"""End-to-end checks of the command-line subcommands."""

import json

import numpy as np
import pytest

from searchdiff.cli import main

CONFIG = """
energy = gaussian2
seed = 11
rounds = 2
inner_iters = 6
eval_every = 3
eval_n = 64
searcher_chains = 8
searcher_steps = 100
searcher_burn_in = 50
searcher_step_size = 0.05
learner_t_steps = 8
learner_batch = 16
learner_hidden = 16
learner_time_embed = 8
rnd_hidden = 16
rnd_out = 4
replay_capacity = 2000
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    ws = tmp_path_factory.mktemp("cli")
    cfg = ws / "run.cfg"
    cfg.write_text(CONFIG)
    return ws, cfg


@pytest.fixture(scope="module")
def pipeline_out(workspace):
    ws, cfg = workspace
    out = ws / "run"
    code = main(["pipeline", "--config", str(cfg), "--out-dir", str(out)])
    assert code == 0
    return out


def test_pipeline_writes_artifacts_and_summary(pipeline_out, capsys):
    out = pipeline_out
    for name in ("metrics.jsonl", "checkpoint_final.bin", "buffer.csv", "ledger.json"):
        assert (out / name).exists(), name
    # the resolved config is dumped next to the run outputs
    assert "energy = gaussian2" in (out / "config.txt").read_text()


def test_search_command(workspace, capsys):
    ws, cfg = workspace
    out = ws / "search"
    assert main(["search", "--config", str(cfg), "--out-dir", str(out), "--seed", "5"]) == 0
    sidecar = json.loads((out / "search.json").read_text())
    assert sidecar["seed"] == 5
    assert sidecar["estimator_kind"] == "heuristic"
    assert np.isfinite(sidecar["log_z_hat"])
    stdout = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert stdout == sidecar
    data = np.genfromtxt(out / "samples.csv", delimiter=",", skip_header=1)
    assert data.shape[1] == 3  # x0, x1, energy


def test_train_command_from_buffer(workspace, pipeline_out, capsys):
    ws, cfg = workspace
    out = ws / "train"
    code = main(
        [
            "train",
            "--config", str(cfg),
            "--out-dir", str(out),
            "--buffer", str(pipeline_out / "buffer.csv"),
            "--checkpoint", str(pipeline_out / "checkpoint_final.bin"),
        ]
    )
    assert code == 0
    info = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert info["steps"] == 6
    assert np.isfinite(info["log_z_theta"])
    assert (out / "metrics.jsonl").exists()
    assert (out / "checkpoint_final.bin").exists()


def test_eval_command(workspace, pipeline_out, capsys):
    ws, cfg = workspace
    code = main(
        [
            "eval",
            "--config", str(cfg),
            "--checkpoint", str(pipeline_out / "checkpoint_final.bin"),
        ]
    )
    assert code == 0
    rec = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    # the sandwich holds in expectation; allow Monte Carlo noise
    assert rec["elbo"] - 3 * rec["elbo_se"] <= rec["eubo"] + 3 * rec["eubo_se"]
    assert rec["gap"] == pytest.approx(rec["eubo"] - rec["elbo"], abs=1e-9)


def test_sample_command(workspace, pipeline_out, capsys):
    ws, cfg = workspace
    out_csv = ws / "samples_out.csv"
    code = main(
        [
            "sample",
            "--config", str(cfg),
            "--checkpoint", str(pipeline_out / "checkpoint_final.bin"),
            "--n", "64",
            "--out", str(out_csv),
            "--with-energy",
        ]
    )
    assert code == 0
    info = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert info["n"] == 64
    data = np.genfromtxt(out_csv, delimiter=",", skip_header=1)
    assert data.shape == (64, 3)
    assert np.isfinite(data).all()


def test_report_command(workspace, pipeline_out, capsys):
    ws, _ = workspace
    out = ws / "report"
    code = main(
        [
            "report",
            "--metrics", str(pipeline_out / "metrics.jsonl"),
            "--out-dir", str(out),
        ]
    )
    assert code == 0
    final = json.loads((out / "final.json").read_text())
    assert set(final) == {"elbo", "eubo", "gap", "n_evals_averaged"}
    lines = (out / "summary.csv").read_text().splitlines()
    n_records = len((pipeline_out / "metrics.jsonl").read_text().splitlines())
    assert len(lines) == n_records + 1  # header row


def test_report_histogram(workspace, pipeline_out, capsys):
    ws, cfg = workspace
    out_csv = ws / "hist_samples.csv"
    main(
        [
            "sample",
            "--config", str(cfg),
            "--checkpoint", str(pipeline_out / "checkpoint_final.bin"),
            "--n", "128",
            "--out", str(out_csv),
            "--with-energy",
        ]
    )
    out = ws / "report_hist"
    code = main(
        [
            "report",
            "--metrics", str(pipeline_out / "metrics.jsonl"),
            "--samples", str(out_csv),
            "--bins", "10",
            "--out-dir", str(out),
        ]
    )
    assert code == 0
    hist = (out / "hist_energy.csv").read_text().splitlines()
    assert hist[0] == "bin_left,bin_right,count"
    counts = [int(row.split(",")[2]) for row in hist[1:]]
    assert sum(counts) == 128


def test_error_is_json_on_stderr(workspace, capsys, tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("energy = banana\n")
    code = main(["pipeline", "--config", str(bad)])
    assert code == 1
    captured = capsys.readouterr()
    err = json.loads(captured.err.strip())
    assert err["error"] == "ConfigError"
    assert "banana" in err["message"]
