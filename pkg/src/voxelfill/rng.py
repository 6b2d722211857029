"""Deterministic random streams keyed by (seed, purpose, index...).

Every randomized step draws from its own stream so that results do not
depend on call order or on how work is spread over threads.
"""
from __future__ import annotations

import zlib

import numpy as np


def stream(seed: int, purpose: str, *index: int) -> np.random.Generator:
    key = [int(seed) & 0xFFFFFFFF, zlib.crc32(purpose.encode("utf-8"))]
    key.extend(int(i) & 0xFFFFFFFF for i in index)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(key)))


def child_seed(rng: np.random.Generator) -> int:
    """Draw a 32-bit seed from ``rng`` for a sub-computation."""
    return int(rng.integers(0, 2**32, dtype=np.uint64))
