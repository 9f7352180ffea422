"""Per-purpose seed derivation.

Every random stream is derived from a master seed by a fixed counter scheme:

    SeedSequence(entropy=master_seed, spawn_key=(purpose, index))

`purpose` is a small integer naming what the stream is for, and `index` counts
replicates, draw chunks or similar units. Two streams share state only if they
agree on all three numbers, so replicate r always sees the same draws no matter
how many other replicates run or in what order they finish.
"""
from enum import IntEnum

import numpy as np


class SeedPurpose(IntEnum):
    SAMPLE_DISCRETE = 1
    MC_INTEGRATION = 2
    REPLICATE = 3
    LAW_DRAWS = 4
    SOLVER = 5


def derive_seed_sequence(master_seed: int, purpose: int, index: int = 0) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(purpose), int(index)))


def derive_rng(master_seed: int, purpose: int, index: int = 0) -> np.random.Generator:
    """Generator for stream (purpose, index) under master_seed."""
    return np.random.default_rng(derive_seed_sequence(master_seed, purpose, index))


def derive_int_seed(master_seed: int, purpose: int, index: int = 0) -> int:
    """63-bit integer seed for APIs that take a plain integer."""
    state = derive_seed_sequence(master_seed, purpose, index).generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))
