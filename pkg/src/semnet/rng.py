"""Deterministic random streams keyed by (seed, stream id)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RngState:
    """A reproducible random source: equal (seed, stream) pairs always
    yield identical draw sequences on the same build."""

    seed: int
    stream: int = 0

    def __post_init__(self):
        if self.seed < 0 or self.stream < 0:
            raise ValueError("seed and stream must be non-negative")

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream,))
        return np.random.Generator(np.random.PCG64(seq))

    def child(self, stream: int) -> "RngState":
        """Derive an independent stream under the same seed."""
        return RngState(self.seed, stream)
