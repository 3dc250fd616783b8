"""Counter-based SplitMix64 random streams.

Output ``i`` (0-based) of the stream seeded with ``seed`` is
``mix(seed + (i + 1) * GOLDEN)`` taken modulo 2**64, where ``mix`` is the
standard SplitMix64 finalizer with constants ``0xBF58476D1CE4E5B9`` and
``0x94D049BB133111EB`` and shifts 30, 27, 31.  Because every output is a
pure function of ``(seed, i)`` any implementation can reproduce the
streams bit for bit, and blocks can be drawn in vectorized form.

Uniform doubles use the top 53 bits: ``(z >> 11) * 2**-53``.
"""

from __future__ import annotations

import numpy as np

GOLDEN = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB
MASK64 = (1 << 64) - 1

_G = np.uint64(GOLDEN)
_M1 = np.uint64(MIX1)
_M2 = np.uint64(MIX2)


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def splitmix64(seed: int, n: int, offset: int = 0) -> np.ndarray:
    """Return outputs ``offset .. offset+n-1`` of the stream as uint64."""
    seed = int(seed) & MASK64
    counters = np.arange(offset + 1, offset + n + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(seed) + counters * _G
        return _mix(z)


def mix64(value: int) -> int:
    """Scalar SplitMix64 finalizer (no increment)."""
    with np.errstate(over="ignore"):
        return int(_mix(np.array([int(value) & MASK64], dtype=np.uint64))[0])


def derive_seed(seed: int, *keys: int) -> int:
    """Derive an independent 64-bit sub-seed from ``seed`` and integer keys."""
    s = int(seed) & MASK64
    for k in keys:
        s = int(splitmix64(s ^ mix64(int(k) + 1), 1)[0])
    return s


def uniform(seed: int, n: int, offset: int = 0) -> np.ndarray:
    """Uniform doubles in [0, 1)."""
    z = splitmix64(seed, n, offset)
    return (z >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def rademacher(seed: int, shape) -> np.ndarray:
    """Entries +-1 from the low bit of each stream output (1 -> +1)."""
    shape = tuple(np.atleast_1d(shape))
    n = int(np.prod(shape))
    bits = splitmix64(seed, n) & np.uint64(1)
    return np.where(bits == 1, 1.0, -1.0).reshape(shape)


def permutation(seed: int, n: int) -> np.ndarray:
    """Permutation of ``range(n)`` ordering indices by their stream output."""
    return np.argsort(splitmix64(seed, n), kind="stable")
