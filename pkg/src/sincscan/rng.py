"""Deterministic xorshift-family randomness.

All stochastic choices in the package (parameter initialization, batch
shuffling, synthetic-corpus synthesis, crop offsets) flow through this module
so that a fixed seed reproduces a run bit-for-bit on one platform.  The
stdlib / numpy generators are deliberately not used for anything that affects
artifacts.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    """One splitmix64 mixing step; a uint64 in, a well-mixed uint64 out."""
    z = (x + _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def unit_noise(seed: int, n: int) -> np.ndarray:
    """n deterministic uniform floats in [0, 1) from a counter stream.

    Vectorized splitmix64 over seed + (0..n-1); used where per-sample noise
    is needed at waveform scale (a Python-loop generator would be too slow).
    """
    ctr = (np.uint64(seed & _MASK64) + np.arange(n, dtype=np.uint64))
    with np.errstate(over="ignore"):
        z = (ctr + np.uint64(_GOLDEN))
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        z = z ^ (z >> np.uint64(31))
    return (z >> np.uint64(11)).astype(np.float64) * 2.0**-53


class Rng:
    """xorshift64* pseudo-random generator with explicit 64-bit state."""

    def __init__(self, seed: int):
        state = splitmix64(int(seed) & _MASK64)
        # xorshift state must never be zero
        self._state = state if state != 0 else _GOLDEN

    def next_u64(self) -> int:
        s = self._state
        s ^= s >> 12
        s ^= (s << 25) & _MASK64
        s ^= s >> 27
        self._state = s
        return (s * 0x2545F4914F6CDD1D) & _MASK64

    def spawn(self) -> "Rng":
        """Derive an independent child generator (for per-file substreams)."""
        return Rng(self.next_u64())

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        """Uniform floats in [low, high); scalar when size is None."""
        if size is None:
            u = (self.next_u64() >> 11) * 2.0**-53
            return low + (high - low) * u
        n = int(np.prod(size))
        out = np.empty(n, dtype=np.float64)
        for i in range(n):
            out[i] = (self.next_u64() >> 11) * 2.0**-53
        return low + (high - low) * out.reshape(size)

    def normal(self, size=None, std: float = 1.0):
        """Standard-normal draws via Box-Muller, scaled by std."""
        if size is None:
            return self._normal_pair()[0] * std
        n = int(np.prod(size))
        out = np.empty(n + (n % 2), dtype=np.float64)
        for i in range(0, len(out), 2):
            out[i], out[i + 1] = self._normal_pair()
        return (out[:n] * std).reshape(size)

    def _normal_pair(self):
        # 1 - u keeps the log argument in (0, 1]
        u1 = 1.0 - (self.next_u64() >> 11) * 2.0**-53
        u2 = (self.next_u64() >> 11) * 2.0**-53
        r = np.sqrt(-2.0 * np.log(u1))
        return r * np.cos(2.0 * np.pi * u2), r * np.sin(2.0 * np.pi * u2)

    def integer(self, bound: int) -> int:
        """One integer in [0, bound)."""
        if bound <= 0:
            raise ValueError(f"bound must be positive, got {bound}")
        return self.next_u64() % bound

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates permutation of range(n)."""
        arr = np.arange(n)
        for i in range(n - 1, 0, -1):
            j = self.next_u64() % (i + 1)
            arr[i], arr[j] = arr[j], arr[i]
        return arr
