"""Deterministic random-stream derivation.

Every source of randomness in a run is a PCG64 generator seeded from
``SeedSequence([root_seed, purpose, index])``.  The purpose constants keep
streams independent: reordering layers or adding a consumer never shifts the
draws of an unrelated stream.
"""

from __future__ import annotations

import numpy as np

# Purpose codes. Frozen: changing them invalidates recorded runs.
INIT = 0
NOISE = 1
DATA_ORDER = 2
ATTACK = 3
SYNTH = 4
EVAL_NOISE = 5
MASK = 6


def stream(root_seed: int, purpose: int, index: int = 0) -> np.random.Generator:
    """Return the generator for one (seed, purpose, index) slot."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([root_seed, purpose, index])))
