"""Seeded random streams.

All randomness comes from numpy's PCG64 bit generator keyed by a
``SeedSequence(seed, spawn_key=stream)``. A stream id is a tuple, so e.g.
certification of example 17 uses ``(CERT, 17)`` and never shares draws with
training or with any other example.
"""

import numpy as np

INIT = 0
SHUFFLE = 1
TRAIN_NOISE = 2
CERT = 3
AUDIT = 4
DATA = 5
ATTACK = 6


def stream(seed, *key):
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def gaussian_sample(shape, sigma, rng):
    """i.i.d. N(0, sigma^2) entries."""
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    return sigma * rng.standard_normal(shape)
