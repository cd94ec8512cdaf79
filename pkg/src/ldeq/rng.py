"""SplitMix64, vectorised.

Output k (k = 1, 2, ...) of a stream seeded with ``s`` is
``mix(s + k * 0x9E3779B97F4A7C15 mod 2**64)`` with

    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    z =  z ^ (z >> 31)

Uniform doubles take the top 53 bits; normals use Box-Muller on pairs of
uniforms (cosine branch only).  Sub-streams are derived with
:meth:`SplitMix64.child`, so every consumer gets an independent,
reproducible sequence regardless of call order elsewhere.
"""
from __future__ import annotations

import numpy as np

GAMMA = np.uint64(0x9E3779B97F4A7C15)
M1 = np.uint64(0xBF58476D1CE4E5B9)
M2 = np.uint64(0x94D049BB133111EB)
MASK = (1 << 64) - 1


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * M1
    z = (z ^ (z >> np.uint64(27))) * M2
    return z ^ (z >> np.uint64(31))


class SplitMix64:
    def __init__(self, seed: int):
        self.state = int(seed) & MASK

    def next_u64(self, n: int) -> np.ndarray:
        k = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            out = _mix(np.uint64(self.state) + k * GAMMA)
        self.state = (self.state + n * int(GAMMA)) & MASK
        return out

    def uniform(self, n: int, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return low + (high - low) * u

    def normal(self, n: int, sigma: float = 1.0) -> np.ndarray:
        u = self.uniform(2 * n)
        u1 = 1.0 - u[:n]  # (0, 1]
        u2 = u[n:]
        return sigma * np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)

    def child(self, tag: int) -> "SplitMix64":
        """Independent stream keyed by ``tag``; does not advance this one."""
        with np.errstate(over="ignore"):
            s = _mix(np.array([self.state ^ ((int(tag) * 0xD1B54A32D192ED03) & MASK)],
                              dtype=np.uint64))
        return SplitMix64(int(s[0]))
