"""Deterministic random number generation.

Everything random in this package flows through a SplitMix64 stream so that
runs are bit-reproducible across platforms and numpy versions. Streams are
cheap to fork: `derive` folds string/int tags into a new 64-bit seed, which
is how modules obtain independent substreams from one user-facing seed.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3

# 2**-53; maps the top 53 bits of a u64 onto [0, 1).
_U53 = 1.0 / (1 << 53)


def _mix(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        return z ^ (z >> np.uint64(31))


def mix64(value: int) -> int:
    """Scalar SplitMix64 finalizer; pure-python, used for seed derivation."""
    z = value & _MASK
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK
    return (z ^ (z >> 31)) & _MASK


def derive(seed: int, *tags: int | str) -> int:
    """Fold tags into `seed`, producing an independent substream seed."""
    h = mix64(seed)
    for tag in tags:
        acc = _FNV_OFFSET
        for byte in str(tag).encode("utf-8"):
            acc = ((acc ^ byte) * _FNV_PRIME) & _MASK
        h = mix64(h ^ acc)
    return h


class SplitMix64:
    """Vectorized SplitMix64 generator over numpy uint64 arithmetic."""

    def __init__(self, seed: int):
        self._state = seed & _MASK

    def next_u64(self, n: int) -> np.ndarray:
        """Return the next `n` raw 64-bit outputs."""
        with np.errstate(over="ignore"):
            steps = np.arange(1, n + 1, dtype=np.uint64) * np.uint64(_GOLDEN)
            block = _mix(np.uint64(self._state) + steps)
        self._state = (self._state + _GOLDEN * n) & _MASK
        return block

    def uniform(self, shape: int | tuple[int, ...], low: float = 0.0, high: float = 1.0) -> np.ndarray:
        """Uniform float64 draws in [low, high)."""
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * _U53
        return (low + (high - low) * u).reshape(shape)

    def normal(self, shape: int | tuple[int, ...]) -> np.ndarray:
        """Standard normal draws via Box-Muller."""
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        pairs = (n + 1) // 2
        raw = self.next_u64(2 * pairs)
        # u1 in (0, 1] so log(u1) is finite; u2 in [0, 1).
        u1 = ((raw[:pairs] >> np.uint64(11)).astype(np.float64) + 1.0) * _U53
        u2 = (raw[pairs:] >> np.uint64(11)).astype(np.float64) * _U53
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        out = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        return out.reshape(shape)

    def integers(self, n: int, upper: int) -> np.ndarray:
        """`n` integers uniform in [0, upper); modulo bias is negligible for
        upper values far below 2**64 (sample counts here are in the tens of
        thousands)."""
        return (self.next_u64(n) % np.uint64(upper)).astype(np.int64)
