"""Counter-based, splittable random streams.

Every stochastic operation in the package is keyed by a :class:`SeedKey`.
A key maps onto the 128-bit key of the Philox counter-based generator, so
distinct keys give statistically independent streams and the same key always
replays the same stream.  Child keys are derived by hashing, never by
advancing shared state, which is what makes parallel fan-out deterministic:
worker scheduling cannot change which numbers a given trial sees.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.random import Generator, Philox

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_SALT = 0xD1B54A32D192ED03


def _splitmix64(z: int) -> int:
    """One round of splitmix64; full-period mixing of a 64-bit word."""
    z = (z + _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


@dataclass(frozen=True)
class SeedKey:
    """Identifier of an independent random stream.

    ``root_seed`` names the experiment, ``stream_index`` the position in the
    (conceptually infinite) tree of derived streams.
    """

    root_seed: int
    stream_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "root_seed", int(self.root_seed) & _MASK64)
        object.__setattr__(self, "stream_index", int(self.stream_index) & _MASK64)

    def child(self, index: int) -> "SeedKey":
        """Derive the ``index``-th child key.

        Pure function of ``(root_seed, stream_index, index)``; both key words
        are re-mixed so sibling subtrees do not collide.
        """
        if index < 0:
            raise ValueError("child index must be nonnegative")
        stream = _splitmix64(self.stream_index ^ _splitmix64(index))
        root = _splitmix64(self.root_seed ^ _splitmix64(stream ^ _SALT))
        return SeedKey(root, stream)


def derive_child(key: SeedKey, index: int) -> SeedKey:
    return key.child(index)


def generator(key: SeedKey) -> Generator:
    """A fresh Philox-backed generator positioned at the start of ``key``'s stream."""
    words = np.array([key.root_seed, key.stream_index], dtype=np.uint64)
    return Generator(Philox(key=words))


def normals(key: SeedKey, shape) -> np.ndarray:
    """Standard normal draws from ``key``'s stream, in C order."""
    return generator(key).standard_normal(shape)
