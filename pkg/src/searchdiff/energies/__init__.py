"""Benchmark energy models and the shared evaluation-counting interface."""

from __future__ import annotations

import re

from .base import EnergyModel, EvalCounter, GaussianEnergy, UnsupportedOracleError
from .gmm import GMM40_MEANS, GMM40_MEANS_SEED, GaussianMixture, gmm40
from .lj import LennardJones
from .manywell import Manywell, manywell_log_partition

__all__ = [
    "EnergyModel",
    "EvalCounter",
    "GaussianEnergy",
    "UnsupportedOracleError",
    "GaussianMixture",
    "GMM40_MEANS",
    "GMM40_MEANS_SEED",
    "gmm40",
    "LennardJones",
    "Manywell",
    "manywell_log_partition",
    "make_energy",
]


def make_energy(name: str) -> EnergyModel:
    """Build a model from its config name.

    Recognized: ``gmm40``, ``manywell{d}`` (even d), ``lj13``, ``lj55``,
    and ``gaussian{d}`` for smoke tests.
    """
    if name == "gmm40":
        return gmm40()
    m = re.fullmatch(r"manywell(\d+)", name)
    if m:
        return Manywell(int(m.group(1)))
    m = re.fullmatch(r"lj(\d+)", name)
    if m:
        n = int(m.group(1))
        if n not in (13, 55):
            raise ValueError(f"unsupported cluster size lj{n}, use lj13 or lj55")
        return LennardJones(n)
    m = re.fullmatch(r"gaussian(\d+)", name)
    if m:
        return GaussianEnergy(int(m.group(1)))
    raise ValueError(f"unknown energy model {name!r}")
