"""Reproducible random streams.

Every trajectory owns an independent counter-based (Philox) stream keyed by
``(master_seed, trajectory_index, purpose)``, so ensembles can be split over
any number of workers without changing a single draw.
"""

import numpy as np

WIENER = 0
JUMPS = 1
INIT = 2
OPTIMIZER = 3


def stream(seed, index=0, purpose=WIENER):
    """Return a fresh ``numpy.random.Generator`` for one trajectory/purpose."""
    if seed < 0:
        raise ValueError("seed must be nonnegative")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(index), int(purpose)))
    return np.random.Generator(np.random.Philox(ss))
