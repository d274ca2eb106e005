"""Seed derivation and random streams.

Every replication gets its own PCG64 stream seeded by a SplitMix64 mix of
``(base_seed, rep)``. PCG64 output is specified bit-for-bit, so a given
``(base_seed, rep)`` yields the same uniforms on every platform, and a
replication's stream does not depend on which other replications run.
"""

import numpy as np

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    x = (x + _GOLDEN) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def replication_seed(base_seed: int, rep: int) -> int:
    """64-bit seed for replication ``rep`` of an experiment."""
    return splitmix64((splitmix64(base_seed & MASK64) + rep) & MASK64)


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed & MASK64))
