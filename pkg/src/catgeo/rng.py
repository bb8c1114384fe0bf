"""Deterministic RNG streams.

Every stochastic component takes an explicit seed; independent units of work
(trials, realizations, bootstrap loops) get their own substream derived from
(master_seed, index...) so that results do not depend on execution order or
on how work is distributed across processes.
"""

import numpy as np


def derive_rng(master_seed, *indices):
    """Generator for the substream identified by (master_seed, *indices)."""
    entropy = (int(master_seed),) + tuple(int(i) for i in indices)
    return np.random.default_rng(np.random.SeedSequence(entropy))
