"""Seeded, splittable random streams.

Streams are keyed by ``(seed, *labels)`` and backed by numpy's counter-based
Philox generator, so data generation, weight init and shuffling draw from
independent sequences of a single run seed and never perturb each other.
"""

from __future__ import annotations

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _word(label) -> int:
    if isinstance(label, (int, np.integer)):
        return int(label) & 0xFFFFFFFF
    return zlib.crc32(str(label).encode("utf-8"))


class Rng:
    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64

    def stream(self, *labels) -> np.random.Generator:
        words = [self.seed & 0xFFFFFFFF, self.seed >> 32] + [_word(x) for x in labels]
        return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))

    def child(self, *labels) -> "Rng":
        """Derive an independent Rng, e.g. one per model component."""
        g = self.stream("child", *labels)
        return Rng(int(g.integers(0, 2**63 - 1)))

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed})"
