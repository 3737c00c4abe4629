"""Named, independent random streams derived from one experiment seed.

Every consumer of randomness asks for its own stream by purpose and key, so
adding or removing a draw in one place never shifts the numbers seen
elsewhere.  The federated trainer and the centralized oracle rely on this to
replay the same initialization and visiting orders.
"""

from __future__ import annotations

import numpy as np

SERVER_INIT = 0
CLIENT_INIT = 1
FILLING = 2
VISIT_ORDER = 3
SCHEDULE = 4


def stream(seed: int, purpose: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(purpose, *keys)))
