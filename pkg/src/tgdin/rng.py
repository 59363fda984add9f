"""Deterministic, splittable random streams.

Every random draw in the package comes from a counter-based Philox
generator keyed by ``(root_seed, stream_id)``.  Streams with distinct
keys are statistically independent, and a stream's output depends only
on its key -- never on allocation order -- so traces and model
initialisations can be (re)generated in any order, serially or in
parallel, with identical results.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_MASK64 = (1 << 64) - 1

# splitmix64 constants; used to fold structured ids into one 64-bit word.
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def mix64(*parts: int) -> int:
    """Fold integers into a single well-mixed 64-bit value (splitmix64)."""
    h = 0
    for p in parts:
        h = (h + (int(p) & _MASK64) + _GOLDEN) & _MASK64
        h = ((h ^ (h >> 30)) * _MIX1) & _MASK64
        h = ((h ^ (h >> 27)) * _MIX2) & _MASK64
        h ^= h >> 31
    return h


@dataclass
class RngStream:
    """A named random stream: key identifies it, the generator consumes it.

    The stream is single-owner: share the (root_seed, stream_id) key
    freely, but do not share a live generator between writers.
    """

    root_seed: int
    stream_id: int
    _gen: np.random.Generator | None = field(default=None, repr=False)

    @property
    def gen(self) -> np.random.Generator:
        if self._gen is None:
            key = np.array([self.root_seed & _MASK64, self.stream_id & _MASK64],
                           dtype=np.uint64)
            self._gen = np.random.Generator(np.random.Philox(key=key))
        return self._gen

    def substream(self, *parts: int) -> "RngStream":
        """Derive an independent child stream from this stream's identity."""
        return RngStream(self.root_seed, mix64(self.stream_id, *parts))


def derive_stream(root_seed: int, stream_id: int) -> RngStream:
    """Create the stream keyed by (root_seed, stream_id)."""
    return RngStream(int(root_seed), int(stream_id))
