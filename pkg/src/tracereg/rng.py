"""Seed derivation for reproducible trials.

Every trial gets its own stream: ``derive_seed(master, index)`` mixes the
pair with the splitmix64 finalizer and the result seeds a PCG64 generator.
Two trials never share a stream unless they share (master, index).
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    x = (x + _GOLDEN) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def derive_seed(master: int, index: int) -> int:
    return splitmix64((splitmix64(master & _MASK) ^ ((index * _GOLDEN) & _MASK)) & _MASK)


def make_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(int(seed) & _MASK))


def trial_rng(master: int, index: int) -> np.random.Generator:
    return make_rng(derive_seed(master, index))
