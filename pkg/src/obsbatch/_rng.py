"""Seed derivation shared by every randomized component.

All randomness flows from a user seed through ``SeedSequence`` entropy
tuples, so independent streams (shuffle plan, per-round permutation, epoch
order, buffer sampling, ...) never share state and are reproducible.
"""

from __future__ import annotations

import numpy as np

RNG_NAME = "numpy.PCG64+SeedSequence[seed,stream,*keys]"

SEED_MAX = 2**64 - 1

# stream tags; never renumber, outputs depend on them
SHUFFLE_PLAN = 1
SHUFFLE_ROUND = 2
EPOCH_BLOCKS = 3
EPOCH_BUFFER = 4
ROW_RANDOM = 5
SYNTH = 6
VERIFY_SAMPLE = 7
SIMULATION = 8


def check_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed <= SEED_MAX:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def derive_rng(seed: int, stream: int, *keys: int) -> np.random.Generator:
    entropy = [check_seed(seed), stream, *(int(k) for k in keys)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
