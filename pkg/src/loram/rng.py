"""Reproducible random streams.

The generator is SplitMix64 (the xorshift-multiply mixer used to seed the
xorshift family).  Output ``i`` of a stream is ``mix(seed + (i + 1) * GOLDEN)``,
so a block of draws is a pure function of ``(seed, counter)`` and can be
produced vectorised with identical bits on every platform.  Normal deviates
use the Box-Muller transform on pairs of 53-bit uniforms.
"""
from __future__ import annotations

import numpy as np

__all__ = ["Rng", "gaussian_matrix"]

_MASK = (1 << 64) - 1
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


class Rng:
    """SplitMix64 stream.  Not thread-safe; give each worker its own instance."""

    def __init__(self, seed: int = 0):
        self.seed = int(seed) & _MASK
        self.counter = 0

    def __repr__(self):
        return f"Rng(seed={self.seed}, counter={self.counter})"

    def spawn(self, key: int) -> "Rng":
        """Independent child stream derived from this stream's seed and ``key``."""
        z = _mix(np.array([(self.seed ^ (int(key) * 0xD1B54A32D192ED03)) & _MASK], dtype=np.uint64))
        return Rng(int(z[0]))

    def next_uint64(self, size: int) -> np.ndarray:
        size = int(size)
        idx = np.arange(self.counter + 1, self.counter + size + 1, dtype=np.uint64)
        self.counter += size
        with np.errstate(over="ignore"):
            return _mix(np.uint64(self.seed) + idx * _GOLDEN)

    def uniform(self, size: int) -> np.ndarray:
        """Uniform doubles in (0, 1]."""
        bits = self.next_uint64(size) >> np.uint64(11)
        return (bits.astype(np.float64) + 1.0) * (1.0 / 9007199254740992.0)

    def normal(self, size: int) -> np.ndarray:
        size = int(size)
        half = (size + 1) // 2
        u = self.uniform(2 * half)
        radius = np.sqrt(-2.0 * np.log(u[0::2]))
        theta = 2.0 * np.pi * u[1::2]
        out = np.empty(2 * half)
        out[0::2] = radius * np.cos(theta)
        out[1::2] = radius * np.sin(theta)
        return out[:size]


def gaussian_matrix(rng: Rng, rows: int, cols: int, sigma: float = 1.0) -> np.ndarray:
    """``rows x cols`` matrix of i.i.d. N(0, sigma^2) entries drawn from ``rng``."""
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    z = rng.normal(int(rows) * int(cols)).reshape(int(rows), int(cols))
    if sigma == 0:
        return np.zeros_like(z)
    return z * float(sigma)
