"""Reproducible counter-based random streams.

Streams are keyed by (seed, stream_id) through the Philox bit generator, so
distinct stream ids give statistically independent streams and the same pair
reproduces byte-identical output on every platform.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RngStream:
    """Identity of one random stream: a 64-bit seed plus a 64-bit stream id."""

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        if not (0 <= self.seed < 2**64):
            raise ValueError("seed must fit in 64 bits")
        if not (0 <= self.stream_id < 2**64):
            raise ValueError("stream_id must fit in 64 bits")

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream."""
        return np.random.Generator(np.random.Philox(key=[self.seed, self.stream_id]))


def derive_streams(seed: int, n_workers: int) -> list[RngStream]:
    """Streams for ``n_workers`` tasks: stream ids are the counters 0..n-1.

    The derivation is a plain counter, so the first stream of (seed, 1) and
    of (seed, 4) coincide and merged results do not depend on worker count.
    """
    if n_workers < 1:
        raise ValueError("n_workers must be >= 1")
    return [RngStream(seed, i) for i in range(n_workers)]


def as_streams(rng) -> list[RngStream]:
    """Normalize a single stream or a sequence of streams to a sorted list.

    Sorting by stream id makes merged statistics independent of the order in
    which per-stream work completes.
    """
    if isinstance(rng, RngStream):
        return [rng]
    streams = sorted(rng, key=lambda s: (s.seed, s.stream_id))
    if not streams:
        raise ValueError("need at least one RngStream")
    return streams
