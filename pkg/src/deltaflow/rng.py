"""Counter-based noise streams.

Every draw is addressed by ``(seed, stream, index)`` through a Philox4x64
bit generator, so any consumer can replay the exact noise of any step
without storing it — two trajectories handed the same stream see identical
noise, and re-running a pipeline reproduces it bit-exactly. Distinct stream
ids give statistically independent sequences.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .grids import validate_dims

ALGORITHM = "philox4x64"

__all__ = ["NoiseStream", "gaussian_draw", "ALGORITHM"]


def _generator(seed: int, stream: int, index: int) -> np.random.Generator:
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, stream & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
    # Draw index occupies counter word 2: each draw owns a 2^128-block range,
    # so a single draw can never run into its neighbour's blocks.
    counter = np.array([0, 0, index & 0xFFFFFFFFFFFFFFFF, 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


@dataclass
class NoiseStream:
    """Stateless-per-index random stream with a stateful convenience cursor."""

    seed: int
    stream: int = 0
    _cursor: int = field(default=0, repr=False)

    def spawn(self, stream: int) -> "NoiseStream":
        """Independent stream under the same seed."""
        return NoiseStream(self.seed, stream)

    # -- stateless draws -------------------------------------------------
    def normal_at(self, index: int, dims: Sequence[int]) -> np.ndarray:
        dims = validate_dims(dims)
        return _generator(self.seed, self.stream, index).standard_normal(dims, dtype=np.float64)

    def integers_at(self, index: int, low: int, high: int, n: int = 1) -> np.ndarray:
        return _generator(self.seed, self.stream, index).integers(low, high, size=n)

    def uniform_at(self, index: int, low: float, high: float, n: int = 1) -> np.ndarray:
        return _generator(self.seed, self.stream, index).uniform(low, high, size=n)

    def permutation_at(self, index: int, n: int) -> np.ndarray:
        return _generator(self.seed, self.stream, index).permutation(n)

    # -- cursor draws ----------------------------------------------------
    def normal(self, dims: Sequence[int]) -> np.ndarray:
        out = self.normal_at(self._cursor, dims)
        self._cursor += 1
        return out

    def integers(self, low: int, high: int, n: int = 1) -> np.ndarray:
        out = self.integers_at(self._cursor, low, high, n)
        self._cursor += 1
        return out

    def uniform(self, low: float, high: float, n: int = 1) -> np.ndarray:
        out = self.uniform_at(self._cursor, low, high, n)
        self._cursor += 1
        return out


def gaussian_draw(stream: NoiseStream, dims: Sequence[int]) -> np.ndarray:
    """i.i.d. standard-normal grid; deterministic in (seed, stream, cursor)."""
    return stream.normal(dims)
