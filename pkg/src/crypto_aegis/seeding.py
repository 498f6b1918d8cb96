"""Deterministic seed derivation.

Every randomized stage gets its own seed derived from one top-level seed
through SplitMix64, so a single integer reproduces a whole run and stages
(trees, folds, permutations) can be recomputed independently.
All generators are numpy ``PCG64`` via :func:`numpy.random.default_rng`.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def derive_seed(seed: int, *path: int) -> int:
    """Mix ``seed`` with each element of ``path`` in turn."""
    x = splitmix64(seed & _MASK)
    for p in path:
        x = splitmix64((x + p) & _MASK)
    return x


def rng(seed: int, *path: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *path))
