"""Seeded random streams.

Every stream is a Philox (counter-based) generator keyed by
``SeedSequence(seed, spawn_key=keys)``. A trial's stream depends only on
``(seed, trial, purpose)``, so changing the number of trials never reshuffles
earlier ones.
"""
from __future__ import annotations

import numpy as np

# stream purposes within a trial
PHI = 0
CONTEXTS = 1
ACTIONS = 2
SPLIT = 3
NOISE = 4


def stream(seed: int, *keys: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))
