"""Counter-based random number streams.

Every simulated path owns a private stream identified by the pair
``(seed, stream)``; both are 64-bit integers keyed into a Philox counter-based
generator.  The same pair always reproduces the same increments regardless of
batch layout or worker count, which is what makes the Monte Carlo runs
bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class StreamSpec:
    """Identifier of one RNG stream, recorded in every output row."""

    seed: int
    stream: int


def generator(seed: int, stream: int) -> np.random.Generator:
    """Philox generator keyed by (seed, stream)."""
    key = np.array([seed & _MASK64, stream & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def normal_increments(seed: int, stream: int, steps: int, dim: int) -> np.ndarray:
    """Standard normal array of shape (steps, dim) drawn from one stream."""
    return generator(seed, stream).standard_normal((steps, dim))


def batch_normal_increments(
    seed: int, first_stream: int, count: int, steps: int, dim: int
) -> np.ndarray:
    """Increments for ``count`` consecutive streams, shape (count, steps, dim).

    Row i is byte-identical to ``normal_increments(seed, first_stream + i)``,
    so chunked generation cannot change any path.
    """
    out = np.empty((count, steps, dim))
    for i in range(count):
        out[i] = normal_increments(seed, first_stream + i, steps, dim)
    return out
