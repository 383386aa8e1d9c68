"""Seed derivation and random generators.

Every random draw in the package goes through :func:`make_rng`, which builds a
counter-based Philox generator keyed by a 64-bit integer.  Sub-streams are keyed
by :func:`derive_seed`, a SplitMix64 chain over the base seed and a tuple of
integer labels, so that two call sites never share a stream by accident.

The Philox key is the derived 64-bit value with a zero counter, which makes the
stream reproducible bit for bit on every platform numpy supports.
"""
from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1

# Stream labels; one per distinct use of randomness.
STREAM_MATRIX = 1
STREAM_KEYSTREAM = 2
STREAM_MAGNITUDE = 3
STREAM_PRIOR = 4
STREAM_DATA = 5
STREAM_OBSERVATION = 6
STREAM_PERTURB = 7
STREAM_DISTORT = 8
STREAM_TRIAL = 9
STREAM_PAYLOAD = 10


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def derive_seed(seed: int, *labels: int) -> int:
    """Mix ``seed`` with integer ``labels`` into a 64-bit sub-seed."""
    h = splitmix64(seed & _MASK)
    for label in labels:
        h = splitmix64(h ^ (label & _MASK))
    return h


def make_rng(seed: int, *labels: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=derive_seed(seed, *labels)))
