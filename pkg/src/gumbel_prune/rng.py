"""Seeded random streams.

Every stream is a Philox4x64-10 counter-based generator (numpy's ``Philox``)
keyed through ``SeedSequence(seed, spawn_key=...)``.  Named sub-streams are
derived by appending a stable integer to the spawn key, so data shuffling and
gate noise never share state even when they come from one experiment seed.
"""

from __future__ import annotations

import zlib

import numpy as np

_TWO_POW_M53 = 2.0 ** -53


class Rng:
    """Deterministic random source with an open-interval uniform."""

    def __init__(self, seed: int = 0, spawn_key: tuple[int, ...] = ()):
        if seed < 0 or seed >= 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = int(seed)
        self.spawn_key = tuple(int(k) for k in spawn_key)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.spawn_key)
        self._bitgen = np.random.Philox(ss)
        self._gen = np.random.Generator(self._bitgen)

    def stream(self, name: str) -> "Rng":
        """Independent child stream identified by ``name``."""
        key = zlib.crc32(name.encode("utf-8"))
        return Rng(self.seed, self.spawn_key + (key,))

    def uniform(self, size=None) -> np.ndarray | float:
        """Uniform draws on the open interval (0, 1).

        The top 53 bits of each 64-bit word give k in [0, 2^53); the value is
        (k + 0.5) * 2^-53, so neither 0 nor 1 can occur.
        """
        n = 1 if size is None else int(np.prod(size))
        raw = self._bitgen.random_raw(n) >> np.uint64(11)
        u = (raw.astype(np.float64) + 0.5) * _TWO_POW_M53
        if size is None:
            return float(u[0])
        return u.reshape(size)

    def gumbel(self, size=None) -> np.ndarray | float:
        """Standard Gumbel(0, 1) draws, -log(-log(u))."""
        u = self.uniform(size)
        return -np.log(-np.log(u))

    def normal(self, size=None, scale: float = 1.0) -> np.ndarray:
        return self._gen.normal(0.0, scale, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, k: int) -> np.ndarray:
        """k distinct indices from range(n), uniformly."""
        return self._gen.choice(n, size=k, replace=False)

    def state(self) -> dict:
        return self._bitgen.state
