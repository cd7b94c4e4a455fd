"""Deterministic pseudo-random generator shared by every stochastic operation.

The generator is xoshiro256** with its four-word state filled from a
splitmix64 sequence started at the user seed.  Seeded runs must reproduce
bit-identically (weight init, dropout masks, data shuffling, synthetic image
noise), so the exact stream is part of the toolkit contract and is pinned
here instead of delegating to a library RNG whose stream may change between
versions.

Derived-value conventions (all part of the contract):

* ``uniform``  -- one 64-bit draw; value = (u >> 11) * 2**-53, in [0, 1).
* ``normal``   -- two 64-bit draws per variate (Box-Muller, cosine branch):
                  z = sqrt(-2 ln(1 - u1)) * cos(2 pi u2).
* ``randint_below(n)`` -- rejection sampling on the top of the 2**64 range,
                  then ``u % n``; unbiased.
* ``shuffle``  -- Fisher-Yates from the last element down, using
                  ``randint_below``.
"""

from __future__ import annotations

import math

import numpy as np

_MASK64 = (1 << 64) - 1
_U64_RANGE = 1 << 64
_DOUBLE_SCALE = 2.0 ** -53


class Xoshiro256StarStar:
    """64-bit PRNG with a pinned, documented output stream."""

    __slots__ = ("_state",)

    def __init__(self, seed: int):
        if not isinstance(seed, int) or not 0 <= seed <= _MASK64:
            raise ValueError(f"seed must be an integer in [0, 2**64), got {seed!r}")
        # splitmix64 expands the single seed word into the four state words.
        sm = seed
        state = []
        for _ in range(4):
            sm = (sm + 0x9E3779B97F4A7C15) & _MASK64
            z = sm
            z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
            z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
            state.append(z ^ (z >> 31))
        self._state = state

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._state
        x = (s1 * 5) & _MASK64
        result = (((x << 7) | (x >> 57)) & _MASK64) * 9 & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = ((s3 << 45) | (s3 >> 19)) & _MASK64
        self._state = [s0, s1, s2, s3]
        return result

    def u64_array(self, n: int) -> np.ndarray:
        """Next ``n`` raw 64-bit outputs as a uint64 array."""
        out = np.empty(n, dtype=np.uint64)
        s0, s1, s2, s3 = self._state
        for i in range(n):
            x = (s1 * 5) & _MASK64
            out[i] = (((x << 7) | (x >> 57)) & _MASK64) * 9 & _MASK64
            t = (s1 << 17) & _MASK64
            s2 ^= s0
            s3 ^= s1
            s1 ^= s2
            s0 ^= s3
            s2 ^= t
            s3 = ((s3 << 45) | (s3 >> 19)) & _MASK64
        self._state = [s0, s1, s2, s3]
        return out

    def uniform(self) -> float:
        return (self.next_u64() >> 11) * _DOUBLE_SCALE

    def uniform_array(self, n: int) -> np.ndarray:
        return (self.u64_array(n) >> np.uint64(11)).astype(np.float64) * _DOUBLE_SCALE

    def normal(self) -> float:
        u1 = self.uniform()
        u2 = self.uniform()
        return math.sqrt(-2.0 * math.log(1.0 - u1)) * math.cos(2.0 * math.pi * u2)

    def normal_array(self, n: int) -> np.ndarray:
        u = self.uniform_array(2 * n)
        u1, u2 = u[0::2], u[1::2]
        return np.sqrt(-2.0 * np.log(1.0 - u1)) * np.cos(2.0 * np.pi * u2)

    def randint_below(self, n: int) -> int:
        if n <= 0:
            raise ValueError("n must be positive")
        limit = _U64_RANGE - (_U64_RANGE % n)
        while True:
            u = self.next_u64()
            if u < limit:
                return u % n

    def shuffle(self, seq: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(seq) - 1, 0, -1):
            j = self.randint_below(i + 1)
            seq[i], seq[j] = seq[j], seq[i]
