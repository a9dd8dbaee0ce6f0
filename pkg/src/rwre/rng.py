"""Reproducible, splittable random streams.

Every stochastic routine in the package takes an explicit ``RngStream``.
Streams with distinct ``stream_id`` under one seed are statistically
independent, and replaying the same (seed, stream_id) is bit-identical.
Parallel code never shares a stream: it derives one child per work block
with :meth:`RngStream.child`, which keeps results independent of worker
count and scheduling.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class RngStream:
    seed: int
    stream_id: int = 0
    path: tuple[int, ...] = field(default=())

    def generator(self) -> np.random.Generator:
        """Fresh generator for this stream; same stream, same bits."""
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id, *self.path))
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, *keys: int) -> "RngStream":
        """Derived independent stream, keyed deterministically."""
        return RngStream(self.seed, self.stream_id, self.path + tuple(keys))
