"""Deterministic, parallel-safe random streams.

Every stochastic routine derives its generator from (seed, *path) where
the path names the protocol and batch index.  The same path always yields
the same stream, so results are bit-identical regardless of how batches
are distributed over workers.
"""
from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    # Standard splitmix64 finalizer; good avalanche for sequential keys.
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (x ^ (x >> 31)) & _MASK64


def _fold(seed: int, *path) -> int:
    key = _splitmix64(seed & _MASK64)
    for part in path:
        if isinstance(part, str):
            for b in part.encode("utf-8"):
                key = _splitmix64(key ^ b)
        else:
            key = _splitmix64(key ^ (int(part) & _MASK64))
    return key


def substream(seed: int, *path) -> np.random.Generator:
    """Generator keyed by (seed, *path); path parts are ints or strings."""
    return np.random.Generator(np.random.Philox(key=_fold(seed, *path)))


def derive_seed(seed: int, *path) -> int:
    """A decorrelated child seed for sweeps that run many protocols."""
    return _fold(seed, *path)
