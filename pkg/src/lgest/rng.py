"""Deterministic counter-based random stream (splitmix64).

Every stochastic choice in the package (weight init, batch shuffling,
synthetic data) flows through this generator, so a single 64-bit seed pins
the full numeric trajectory of a run. Draw i of a stream seeded with s is
mix64(s + (i+1) * GAMMA), which makes block draws vectorizable without
changing the sequence.
"""

from __future__ import annotations

import numpy as np

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_TWO_NEG53 = 2.0 ** -53


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


class Rng:
    """splitmix64 stream. The uint64 sequence is bit-identical everywhere;
    uniform/normal floats are pure IEEE-754 arithmetic on those bits."""

    def __init__(self, seed: int):
        self.seed = np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF)
        self._drawn = 0

    def u64(self, n: int = 1) -> np.ndarray:
        """Next n raw 64-bit draws."""
        lo = self._drawn + 1
        idx = np.arange(lo, lo + n, dtype=np.uint64)
        self._drawn += n
        return _mix(self.seed + idx * _GAMMA)

    def uniform(self, shape=(), low: float = 0.0, high: float = 1.0) -> np.ndarray:
        """Uniform floats in [low, high); 53 mantissa bits per draw."""
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        u = (self.u64(n) >> np.uint64(11)).astype(np.float64) * _TWO_NEG53
        out = low + u * (high - low)
        return out.reshape(shape) if shape else out[0]

    def normal(self, shape=(), mean: float = 0.0, sigma: float = 1.0) -> np.ndarray:
        """Box-Muller normals; two uniforms consumed per value, no caching."""
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        u1 = (self.u64(n) >> np.uint64(11)).astype(np.float64) * _TWO_NEG53
        u2 = (self.u64(n) >> np.uint64(11)).astype(np.float64) * _TWO_NEG53
        # 1 - u1 is in (0, 1], so the log is finite.
        r = np.sqrt(-2.0 * np.log(1.0 - u1))
        out = mean + sigma * r * np.cos(2.0 * np.pi * u2)
        return out.reshape(shape) if shape else out[0]

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of range(n) driven by raw u64 draws."""
        idx = np.arange(n, dtype=np.int64)
        for i in range(n - 1, 0, -1):
            j = int(self.u64(1)[0] % np.uint64(i + 1))
            idx[i], idx[j] = idx[j], idx[i]
        return idx
