"""Command-line entry points.

Subcommands:

* ``pipeline``: full multi-round run from a config file.
* ``search``: one searcher run on the raw energy; samples CSV + JSON sidecar.
* ``train``: learner-only training against an existing buffer snapshot.
* ``eval``: sandwich bounds for a checkpoint, one JSON record on stdout.
* ``sample``: terminal samples from a checkpoint to CSV.
* ``report``: summary CSV (and histogram bins) from run outputs.

Every command exits 0 on success. On failure a single JSON object
describing the error is printed to stderr and the exit code is nonzero.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import metrics as M
from . import nn
from .config import build_run_config, dump_config, parse_config_file
from .energies import make_energy
from .learner import Learner
from .pipeline import (
    _S_SEARCH,
    EnergyLedger,
    _Evaluator,
    run_pipeline,
    substream,
    write_samples_csv,
)
from .replay import ReplayBuffer
from .searchers import run_search


def _load_config(args) -> "RunConfig":  # noqa: F821
    mapping = parse_config_file(args.config)
    cfg = build_run_config(mapping)
    if getattr(args, "seed", None) is not None:
        from dataclasses import replace

        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "out_dir", None) is not None:
        from dataclasses import replace

        cfg = replace(cfg, out_dir=args.out_dir)
    return cfg


def _cmd_pipeline(args) -> int:
    cfg = _load_config(args)
    result = run_pipeline(cfg)
    if result.out_dir is not None:
        (result.out_dir / "config.txt").write_text(dump_config(cfg))
    summary = {
        "final": result.final(),
        "ledger": result.ledger.as_dict(),
        "out_dir": str(result.out_dir) if result.out_dir else None,
    }
    print(json.dumps(summary, indent=2))
    return 0


def _cmd_search(args) -> int:
    cfg = _load_config(args)
    model = make_energy(cfg.energy)
    result = run_search(model, cfg.searcher, substream(cfg.seed, _S_SEARCH, 1))
    out_dir = Path(cfg.out_dir or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    write_samples_csv(out_dir / "samples.csv", result.samples, result.energies)
    sidecar = {
        "log_z_hat": result.log_z_hat,
        "estimator_kind": result.estimator_kind,
        "accept_rate": result.accept_rate,
        "energy_calls": result.energy_calls,
        "seed": cfg.seed,
    }
    (out_dir / "search.json").write_text(json.dumps(sidecar, indent=2))
    print(json.dumps(sidecar))
    return 0


def _cmd_train(args) -> int:
    cfg = _load_config(args)
    model = make_energy(cfg.energy)
    lrn = Learner(model, cfg.learner, substream(cfg.seed, 0))
    if args.checkpoint:
        lrn.params = nn.load_checkpoint(args.checkpoint)
    buffer = ReplayBuffer.load_csv(args.buffer, cfg.replay_capacity, cfg.replay_rank_k)
    if buffer.dim != model.dim:
        raise ValueError("buffer dim does not match the energy model")
    ledger = EnergyLedger()
    evaluator = _Evaluator(cfg, model, ledger)
    out_dir = Path(cfg.out_dir or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = out_dir / "metrics.jsonl"
    metrics_path.write_text("")
    train_rng = substream(cfg.seed, 3)
    buffer_rng = substream(cfg.seed, 4)
    t0 = time.perf_counter()
    iters = cfg.iterations_per_round()
    for i in range(1, iters + 1):
        on_policy = (i % 2 == 0) != cfg.learner.on_policy_first
        before = model.counter.total
        lrn.train_step(
            "on_policy" if on_policy else "off_policy",
            train_rng,
            buffer=buffer,
            buffer_rng=buffer_rng,
        )
        ledger.learner_calls += model.counter.total - before
        if i % cfg.eval_every == 0 or i == iters:
            rec = evaluator.evaluate(lrn, i, 1, t0)
            M.append_jsonl(metrics_path, rec)
    nn.save_checkpoint(out_dir / "checkpoint_final.bin", lrn.params)
    print(json.dumps({"steps": iters, "log_z_theta": lrn.params.log_z}))
    return 0


def _cmd_eval(args) -> int:
    cfg = _load_config(args)
    model = make_energy(cfg.energy)
    lrn = Learner(model, cfg.learner, substream(cfg.seed, 0))
    lrn.params = nn.load_checkpoint(args.checkpoint)
    evaluator = _Evaluator(cfg, model, EnergyLedger())
    rec = evaluator.evaluate(lrn, 0, 0, time.perf_counter())
    print(rec.to_json_line())
    return 0


def _cmd_sample(args) -> int:
    cfg = _load_config(args)
    model = make_energy(cfg.energy)
    lrn = Learner(model, cfg.learner, substream(cfg.seed, 0))
    lrn.params = nn.load_checkpoint(args.checkpoint)
    rng = substream(cfg.seed if args.seed is None else args.seed, 8)
    x1 = lrn.sample_terminal(args.n, rng)
    energies = model.energy(x1) if args.with_energy else None
    write_samples_csv(args.out, x1, energies)
    print(json.dumps({"n": int(x1.shape[0]), "out": str(args.out)}))
    return 0


def _cmd_report(args) -> int:
    out_dir = Path(args.out_dir or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    with open(args.metrics) as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    if not records:
        raise ValueError("metrics file is empty")
    fields = list(records[0].keys())
    with open(out_dir / "summary.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=fields)
        w.writeheader()
        w.writerows(records)
    tail = records[-10:]

    def _avg(key):
        vals = [r[key] for r in tail if r.get(key) is not None]
        return float(np.mean(vals)) if vals else None

    final = {k: _avg(k) for k in ("elbo", "eubo", "gap")}
    final["n_evals_averaged"] = len(tail)
    (out_dir / "final.json").write_text(json.dumps(final, indent=2))
    if args.samples:
        data = np.genfromtxt(args.samples, delimiter=",", names=True)
        col = "energy" if "energy" in (data.dtype.names or ()) else data.dtype.names[0]
        vals = np.asarray(data[col], dtype=np.float64)
        counts, edges = np.histogram(vals, bins=args.bins)
        with open(out_dir / f"hist_{col}.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["bin_left", "bin_right", "count"])
            for i, c in enumerate(counts):
                w.writerow([f"{edges[i]:.17g}", f"{edges[i + 1]:.17g}", int(c)])
    print(json.dumps(final))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="searchdiff", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", required=True, help="flat key=value file")
        sp.add_argument("--seed", type=int, default=None, help="override config seed")
        sp.add_argument("--out-dir", default=None, help="override output directory")

    common(sub.add_parser("pipeline", help="full multi-round run"))
    common(sub.add_parser("search", help="one searcher run, raw energy"))
    sp = sub.add_parser("train", help="learner-only training from a buffer CSV")
    common(sp)
    sp.add_argument("--buffer", required=True, help="buffer snapshot CSV")
    sp.add_argument("--checkpoint", default=None, help="warm-start checkpoint")
    sp = sub.add_parser("eval", help="sandwich bounds for a checkpoint")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp = sub.add_parser("sample", help="draw terminal samples from a checkpoint")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--n", type=int, default=1000)
    sp.add_argument("--out", required=True, help="samples CSV path")
    sp.add_argument("--with-energy", action="store_true")
    sp = sub.add_parser("report", help="summaries from metrics.jsonl")
    sp.add_argument("--metrics", required=True)
    sp.add_argument("--samples", default=None, help="samples CSV for histograms")
    sp.add_argument("--bins", type=int, default=50)
    sp.add_argument("--out-dir", default=None)
    return p


_COMMANDS = {
    "pipeline": _cmd_pipeline,
    "search": _cmd_search,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "sample": _cmd_sample,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return _COMMANDS[args.command](args)
    except Exception as exc:  # noqa: BLE001, errors become machine-readable JSON
        print(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}),
            file=sys.stderr,
        )
        return 1


if __name__ == "__main__":
    sys.exit(main())
