"""Pinned, portable PRNG for every sampling decision in the toolkit.

splitmix64 is used instead of random.Random because its output stream is
fully specified by the algorithm: the same seed produces the same bytes on
any platform and any Python version. The identifier below is recorded in
dataset metadata and report config echoes.
"""

from __future__ import annotations

import hashlib
from typing import MutableSequence, Sequence, TypeVar

PRNG_ID = "splitmix64-v1"

_MASK64 = (1 << 64) - 1

T = TypeVar("T")


class SplitMix64:
    """Deterministic 64-bit generator (Steele, Lea & Flood's splitmix64 step)."""

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + 0x9E3779B97F4A7C15) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def below(self, bound: int) -> int:
        """Uniform integer in [0, bound), unbiased via rejection sampling."""
        if bound <= 0:
            raise ValueError(f"bound must be positive, got {bound}")
        limit = ((1 << 64) // bound) * bound
        while True:
            u = self.next_u64()
            if u < limit:
                return u % bound

    def shuffle(self, items: MutableSequence[T]) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]

    def sample(self, population: Sequence[T], k: int) -> list[T]:
        """k distinct items drawn uniformly without replacement (partial Fisher-Yates)."""
        n = len(population)
        if not 0 <= k <= n:
            raise ValueError(f"sample size {k} out of range for population of {n}")
        pool = list(population)
        for i in range(k):
            j = i + self.below(n - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]


def derive_seed(seed: int, *parts: str) -> int:
    """Stable 64-bit sub-seed for a namespaced sampling decision.

    Hash-based so per-example streams are independent of dataset order.
    """
    digest = hashlib.sha256()
    digest.update(str(seed & _MASK64).encode("utf-8"))
    for part in parts:
        digest.update(b"\x00")
        digest.update(part.encode("utf-8"))
    return int.from_bytes(digest.digest()[:8], "big")
