"""Counter-based random streams keyed by integer tuples."""

import numpy as np


def rng_for(seed: int, *keys: int) -> np.random.Generator:
    """Philox generator keyed by ``(seed, *keys)``.

    Distinct key tuples give statistically independent streams, so work can
    be split across replicas or threads without sharing state.
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [int(k) & 0xFFFFFFFFFFFFFFFF for k in keys]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
