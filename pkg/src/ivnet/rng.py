"""Deterministic, splittable random number generation.

All randomness in the library flows through :class:`Rng`, a thin wrapper
around numpy's counter-based Philox generator. Philox guarantees the same
sample stream for the same key on every platform, and keying on
(seed, stream) gives cheap independent substreams without any shared state,
so clips/iterations can be prepared in any order with identical results.
"""

from __future__ import annotations

import numpy as np


class Rng:
    """Counter-based generator keyed on (seed, stream)."""

    def __init__(self, seed: int, stream: int = 0):
        if seed < 0 or stream < 0:
            raise ValueError("seed and stream must be non-negative")
        self.seed = int(seed)
        self.stream = int(stream)
        self._gen = np.random.Generator(np.random.Philox(key=[self.seed, self.stream]))

    def split(self, index: int) -> "Rng":
        """Independent substream; deterministic function of (seed, index)."""
        return Rng(self.seed, index)

    def uniform(self, low: float, high: float, shape=None, dtype=np.float64) -> np.ndarray:
        out = self._gen.uniform(low, high, size=shape)
        return np.asarray(out, dtype=dtype)

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        return self._gen.integers(low, high, size=size)

    def random(self) -> float:
        return float(self._gen.random())

    def choice(self, options):
        return options[int(self._gen.integers(0, len(options)))]
