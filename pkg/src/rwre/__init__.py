"""Monte Carlo toolkit for transient walks in site-random environments.

Submodules:

* ``env_model``   environment laws, cumulants, tail index, deviation window
* ``walk_sim``    quenched walk runs and annealed batches
* ``branching``   branching process with immigration, cycles, block splits
* ``perpetuity``  affine recursions, perpetuity tails, exponential tilting
* ``constants``   regenerative estimators for the tail constants
* ``harness``     experiment drivers, CSV reports, and the CLI
"""

from . import branching, constants, env_model, errors, harness, perpetuity, rng, walk_sim

__all__ = [
    "branching",
    "constants",
    "env_model",
    "errors",
    "harness",
    "perpetuity",
    "rng",
    "walk_sim",
]

__version__ = "0.1.0"
