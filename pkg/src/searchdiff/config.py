"""Flat key-value run configuration.

A config file is plain text, one ``key = value`` per line, ``#`` starts a
comment. Keys mirror the RunConfig tree one level deep (see KEYS below;
the README documents every key). Unknown keys are an error so typos fail
fast. ``default_run_config`` bakes in the per-task defaults: searcher and
learner settings follow the reference configurations for each benchmark
energy, and any file key overrides the default.
"""

from __future__ import annotations

import re
from dataclasses import replace

from .learner import LearnerConfig
from .pipeline import RndConfig, RunConfig
from .searchers import SearcherConfig

# key -> (section, field, type); section "" means RunConfig itself
KEYS = {
    "energy": ("", "energy", str),
    "seed": ("", "seed", int),
    "out_dir": ("", "out_dir", str),
    "rounds": ("", "n_rounds", int),
    "inner_iters": ("", "inner_iters", int),
    "learner_energy_budget": ("", "learner_energy_budget", int),
    "alpha": ("", "alpha", float),
    "replay_capacity": ("", "replay_capacity", int),
    "replay_rank_k": ("", "replay_rank_k", float),
    "eval_every": ("", "eval_every", int),
    "eval_n": ("", "eval_n", int),
    "disable_rnd": ("", "disable_rnd", bool),
    "finetune_instead_of_reinit": ("", "finetune_instead_of_reinit", bool),
    "reinit_log_z": ("", "reinit_log_z", bool),
    "ref_chains": ("", "ref_chains", int),
    "ref_steps": ("", "ref_steps", int),
    "ref_burn_in": ("", "ref_burn_in", int),
    "ref_step_size": ("", "ref_step_size", float),
    "searcher_kind": ("searcher", "kind", str),
    "searcher_chains": ("searcher", "n_chains", int),
    "searcher_steps": ("searcher", "chain_length", int),
    "searcher_burn_in": ("searcher", "burn_in", int),
    "searcher_step_size": ("searcher", "step_size", float),
    "searcher_prior_std": ("searcher", "prior_std", float),
    "searcher_target_accept": ("searcher", "target_accept", float),
    "searcher_adapt_eta": ("searcher", "adapt_eta", float),
    "searcher_adapt_window": ("searcher", "adapt_window", int),
    "searcher_friction": ("searcher", "friction", float),
    "searcher_kt": ("searcher", "kt", float),
    "learner_t_steps": ("learner", "t_steps", int),
    "learner_sigma": ("learner", "sigma", float),
    "learner_batch": ("learner", "batch_size", int),
    "learner_off_batch": ("learner", "off_batch_size", int),
    "learner_lr": ("learner", "lr", float),
    "learner_log_z_lr": ("learner", "log_z_lr", float),
    "learner_hidden": ("learner", "hidden_dim", int),
    "learner_layers": ("learner", "n_hidden_layers", int),
    "learner_time_embed": ("learner", "time_embed_dim", int),
    "replay_ratio": ("learner", "replay_ratio", int),
    "on_policy_first": ("learner", "on_policy_first", bool),
    "rnd_hidden": ("rnd", "hidden_dim", int),
    "rnd_out": ("rnd", "out_dim", int),
    "rnd_predictor_layers": ("rnd", "predictor_layers", int),
    "rnd_target_layers": ("rnd", "target_layers", int),
    "rnd_lr": ("rnd", "lr", float),
}


class ConfigError(ValueError):
    pass


def _convert(key: str, raw: str, typ):
    raw = raw.strip()
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if typ is int:
            try:
                return int(raw)
            except ValueError:
                f = float(raw)  # allow 6e4 style, but only if integral
                if f != int(f):
                    raise ValueError(raw)
                return int(f)
        if typ is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def parse_config_text(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        out[key] = _convert(key, raw, KEYS[key][2])
    return out


def parse_config_file(path) -> dict:
    with open(path) as f:
        return parse_config_text(f.read())


def default_run_config(energy: str) -> RunConfig:
    """Reference defaults per benchmark energy."""
    if energy == "gmm40":
        return RunConfig(
            energy=energy,
            alpha=100.0,
            replay_capacity=600_000,
            learner_energy_budget=1_875_000,
            searcher=SearcherConfig(
                kind="mala",
                n_chains=300,
                chain_length=4000,
                burn_in=2000,
                step_size=1e-3,
                prior_std=21.0,
            ),
            learner=LearnerConfig(t_steps=100, sigma=10.0, batch_size=300),
        )
    if re.fullmatch(r"manywell\d+", energy):
        return RunConfig(
            energy=energy,
            alpha=100.0,
            replay_capacity=60_000,
            learner_energy_budget=1_875_000,
            searcher=SearcherConfig(
                kind="ais",
                n_chains=60_000,
                chain_length=100,
                burn_in=0,
                step_size=1e-3,
                prior_std=1.0,
            ),
            learner=LearnerConfig(t_steps=100, sigma=1.0, batch_size=300),
        )
    if energy == "lj13":
        return RunConfig(
            energy=energy,
            alpha=10.0,
            replay_capacity=50_000,
            learner_energy_budget=80_000,
            searcher=SearcherConfig(
                kind="mala",
                n_chains=16,
                chain_length=4000,
                burn_in=2000,
                step_size=1e-5,
                prior_std=1.75,
            ),
            learner=LearnerConfig(
                t_steps=100,
                sigma=0.2,
                batch_size=32,
                hidden_dim=64,
                n_hidden_layers=5,
            ),
            rnd=RndConfig(predictor_layers=3, target_layers=2),
        )
    if energy == "lj55":
        return RunConfig(
            energy=energy,
            alpha=1.0,
            replay_capacity=10_000,
            learner_energy_budget=10_000,
            searcher=SearcherConfig(
                kind="mala",
                n_chains=1,
                chain_length=10_000,
                burn_in=4000,
                step_size=1e-5,
                prior_std=1.75,
            ),
            learner=LearnerConfig(
                t_steps=100,
                sigma=0.2,
                batch_size=4,
                hidden_dim=64,
                n_hidden_layers=5,
            ),
            rnd=RndConfig(predictor_layers=3, target_layers=2),
        )
    if re.fullmatch(r"gaussian\d+", energy):
        return RunConfig(
            energy=energy,
            alpha=1.0,
            replay_capacity=10_000,
            inner_iters=200,
            eval_n=256,
            searcher=SearcherConfig(
                kind="mala",
                n_chains=32,
                chain_length=500,
                burn_in=250,
                step_size=0.05,
                prior_std=1.0,
            ),
            learner=LearnerConfig(
                t_steps=32,
                sigma=1.0,
                batch_size=64,
                hidden_dim=32,
                time_embed_dim=16,
            ),
            rnd=RndConfig(hidden_dim=32, out_dim=8),
        )
    raise ConfigError(f"no defaults for energy {energy!r}")


def build_run_config(mapping: dict) -> RunConfig:
    """RunConfig from parsed keys: per-task defaults, then overrides."""
    energy = mapping.get("energy")
    if not energy:
        raise ConfigError("config must set 'energy'")
    cfg = default_run_config(energy)
    top, sec = {}, {"searcher": {}, "learner": {}, "rnd": {}}
    for key, value in mapping.items():
        section, attr, _ = KEYS[key]
        if section:
            sec[section][attr] = value
        else:
            top[attr] = value
    if sec["searcher"]:
        cfg = replace(cfg, searcher=replace(cfg.searcher, **sec["searcher"]))
    if sec["learner"]:
        cfg = replace(cfg, learner=replace(cfg.learner, **sec["learner"]))
    if sec["rnd"]:
        cfg = replace(cfg, rnd=replace(cfg.rnd, **sec["rnd"]))
    # an explicit iteration knob overrides the other one's default
    if "inner_iters" in top:
        top.setdefault("learner_energy_budget", None)
    elif "learner_energy_budget" in top:
        top.setdefault("inner_iters", None)
    return replace(cfg, **top)


def dump_config(cfg: RunConfig) -> str:
    """Resolved config as flat text, reparseable by parse_config_text."""
    sections = {"": cfg, "searcher": cfg.searcher, "learner": cfg.learner, "rnd": cfg.rnd}
    lines = []
    for key, (section, attr, _) in KEYS.items():
        value = getattr(sections[section], attr)
        if value is None:
            continue
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
