"""Seed hierarchy: one root seed, independent named sub-streams.

Sub-streams are keyed by a hash of their name, so adding a new consumer never
shifts the draws seen by the existing ones.
"""
import zlib

import numpy as np


def _entropy(seed: int) -> tuple[int, int]:
    seed = int(seed)
    return abs(seed), int(seed < 0)


def substream(seed: int, name: str) -> np.random.Generator:
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(_entropy(seed), spawn_key=(key,)))


def subseed(seed: int, name: str) -> int:
    """Derive an integer seed for a named consumer (e.g. a nested generator call)."""
    return int(substream(seed, name).integers(0, 2**31 - 1))
