"""Reproducible random streams.

Every stochastic component in this package draws from an explicit
:class:`RngState` instead of global RNG state, so any run is replayable
from (seed, stream) alone and batch work can fan out into independent
per-item streams.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class RngState:
    """Seed plus a hierarchical stream key.

    Identical (seed, stream) always reproduces the identical draw
    sequence. ``child(i, ...)`` derives a statistically independent
    stream, used e.g. for per-iteration or per-image draws.
    """

    seed: int
    stream: tuple[int, ...] = field(default=())

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(self.seed, spawn_key=self.stream)
        return np.random.Generator(np.random.PCG64(seq))

    def child(self, *indices: int) -> "RngState":
        return RngState(self.seed, self.stream + tuple(int(i) for i in indices))
