"""Deterministic random substreams.

A substream depends only on the master seed and its integer key, never on
the order in which workers request it.
"""

import secrets

import numpy as np


def substream(master_seed: int, *key: int) -> np.random.Generator:
    seq = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(seq))


def fresh_seed() -> int:
    return secrets.randbits(63)
