"""Seeded, splittable random streams.

Every consumer of randomness gets its own ``RandomSource``: a (seed, stream)
pair that maps to an independent PCG64 generator through numpy's
``SeedSequence`` spawn keys. Identical pairs give bit-identical draws.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# stream ids used by the simulators; trial k uses ``stream_for(k, purpose)``
TRUTH = 0
NOISE = 1
POLICY = 2
JOB_PREFS = 3
_PURPOSES = 8


@dataclass(frozen=True)
class RandomSource:
    seed: int
    stream: int = 0

    def __post_init__(self):
        if self.seed < 0 or self.stream < 0:
            raise ValueError("seed and stream must be non-negative")

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream,))
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, stream: int) -> "RandomSource":
        return RandomSource(self.seed, stream)


def stream_for(trial: int, purpose: int) -> int:
    return trial * _PURPOSES + purpose


def as_generator(rng) -> np.random.Generator:
    """Accept a RandomSource, a Generator, or an int seed."""
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RandomSource):
        return rng.generator()
    if rng is None or isinstance(rng, (int, np.integer)):
        return RandomSource(int(rng or 0)).generator()
    raise TypeError(f"cannot build a generator from {type(rng).__name__}")
