"""searchdiff: neural diffusion samplers trained from gradient-guided search.

The library pairs two components against an unnormalized target density
exp(-E):

* Searchers (MALA, annealed importance sampling, underdamped Langevin)
  explore the energy surface with gradients, fill a replay buffer with
  low-energy states, and produce a first log-partition estimate.
* A Learner fits a neural-drift diffusion sampler to the target with the
  trajectory-balance objective, mixing on-policy rollouts with replayed
  buffer states bridged backward in time, so every expensive energy
  evaluation is reused across many updates.

Random network distillation supplies a novelty bonus that steers later
search rounds toward unexplored regions, and the drift network is
re-initialized between rounds so it can retrain on the improved buffer.
"""

from .energies import make_energy
from .learner import Learner, LearnerConfig
from .metrics import elbo, energy_w2, eubo
from .pipeline import RunConfig, run_pipeline
from .replay import ReplayBuffer
from .rnd import RNDModule
from .searchers import SearcherConfig, run_search

__all__ = [
    "make_energy",
    "Learner",
    "LearnerConfig",
    "elbo",
    "eubo",
    "energy_w2",
    "RunConfig",
    "run_pipeline",
    "ReplayBuffer",
    "RNDModule",
    "SearcherConfig",
    "run_search",
]

__version__ = "0.1.0"
