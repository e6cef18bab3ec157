"""Deterministic RNG derivation.

Every stochastic component draws from a counter-based Philox stream keyed by
(seed, *key). Streams with different keys are statistically independent and
do not depend on how many draws other streams consumed, so e.g. adding a
mixture component or an epoch never perturbs the others.
"""

from __future__ import annotations

import numpy as np


def derived_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for the stream identified by (seed, *key)."""
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(seq))
