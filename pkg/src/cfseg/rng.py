"""Deterministic pseudo-random numbers for dataset generation and seeding.

All randomness in this package flows through SplitMix64 (Steele, Lea &
Flood 2014): a 64-bit state advanced by the golden-gamma increment
0x9E3779B97F4A7C15 and finalized with two xor-shift multiplies.  The
algorithm is tiny, well documented, and trivially portable, so identical
seeds give bit-identical streams on every platform and in every language
an external codec might be written in.

Doubles are built from the top 53 bits (`u64 >> 11`) so uniform draws are
exactly representable; Gaussians use the Box-Muller transform on pairs of
uniforms with a fixed consumption order.
"""

from __future__ import annotations

import math

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


def mix64(z: int) -> int:
    """SplitMix64 finalizer; also usable standalone to derive sub-seeds."""
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 & _MASK64
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & _MASK64
    return z ^ (z >> 31)


class SplitMix64:
    """64-bit-state deterministic generator.

    >>> SplitMix64(0).next_u64() == SplitMix64(0).next_u64()
    True
    """

    def __init__(self, seed: int):
        self._state = seed & _MASK64
        self._gauss_cache: float | None = None

    def next_u64(self) -> int:
        self._state = (self._state + _GAMMA) & _MASK64
        return mix64(self._state)

    def random(self) -> float:
        """Uniform double in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.random()

    def randint(self, n: int) -> int:
        """Uniform integer in [0, n) by rejection on the top bits."""
        if n <= 0:
            raise ValueError("randint bound must be positive")
        # Rejection sampling keeps the distribution exactly uniform.
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            u = self.next_u64()
            if u < limit:
                return u % n

    def normal(self, mu: float = 0.0, sigma: float = 1.0) -> float:
        """Box-Muller Gaussian; pairs are consumed in a fixed order."""
        if self._gauss_cache is not None:
            z = self._gauss_cache
            self._gauss_cache = None
            return mu + sigma * z
        while True:
            u1 = self.random()
            if u1 > 0.0:
                break
        u2 = self.random()
        r = math.sqrt(-2.0 * math.log(u1))
        self._gauss_cache = r * math.sin(2.0 * math.pi * u2)
        return mu + sigma * r * math.cos(2.0 * math.pi * u2)

    def spawn(self, tag: int) -> "SplitMix64":
        """Derive an independent child stream for a record/stage index."""
        return SplitMix64(mix64(self._state ^ mix64(tag ^ 0xA5A5A5A5A5A5A5A5)))


def derive_seed(seed: int, *tags: int) -> int:
    """Stable sub-seed derivation used for per-record / per-stage streams."""
    z = seed & _MASK64
    for t in tags:
        z = mix64(z ^ mix64(t & _MASK64))
    return z
