"""Dense vector helpers and split random streams.

Model vectors are plain 1-D ``float64`` numpy arrays. Random streams use
numpy's PCG64 bit generator seeded through ``SeedSequence`` with a spawn
key, so ``(seed, stream_id)`` fully determines the sequence and distinct ids
give independent streams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

# Reserved stream ids. Worker-owned streams are derived from the worker index.
STREAM_OBJECTIVE = 1_000_001
STREAM_INIT = 1_000_002
STREAM_ESTIMATION = 1_000_003
STREAM_ASGD_DELAY = 1_000_004
_PURPOSE_BATCH = 1
_PURPOSE_PULL = 2


class DimensionError(ValueError):
    """Vectors of different dimension were combined."""


def as_vector(values) -> np.ndarray:
    vec = np.array(values, dtype=np.float64)
    if vec.ndim != 1:
        raise DimensionError(f"expected a 1-D vector, got shape {vec.shape}")
    return vec


def _check_same_dim(x: np.ndarray, y: np.ndarray) -> None:
    if x.shape != y.shape:
        raise DimensionError(f"dimension mismatch: {x.shape} vs {y.shape}")


def axpy(alpha: float, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Return ``y + alpha * x`` as a new vector."""
    if not math.isfinite(alpha):
        raise ValueError(f"alpha must be finite, got {alpha}")
    _check_same_dim(x, y)
    return y + alpha * x


def mean_of(vectors: Sequence[np.ndarray]) -> np.ndarray:
    """Average of the vectors, summed in the order given.

    Computed as ``v_0 + (sum_i (v_i - v_0)) / P`` with the sum accumulated
    sequentially, so the result does not depend on how many threads produced
    the inputs and P identical vectors average to that vector exactly.
    """
    if len(vectors) == 0:
        raise DimensionError("mean_of needs at least one vector")
    base = np.asarray(vectors[0], dtype=np.float64)
    acc = np.zeros_like(base)
    for v in vectors[1:]:
        _check_same_dim(base, v)
        acc += v - base
    return base + acc / len(vectors)


def sq_norm(x: np.ndarray) -> float:
    return float(np.dot(x, x))


@dataclass
class RngStream:
    """A single-owner random stream identified by ``(seed, stream_id)``."""

    seed: int
    stream_id: int
    _gen: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.seed < 0 or self.stream_id < 0:
            raise ValueError("seed and stream_id must be non-negative")
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id,))
        self._gen = np.random.Generator(np.random.PCG64(ss))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def uniform(self) -> float:
        return float(self._gen.random())

    def split(self, sub_id: int) -> "RngStream":
        """Child stream; never shares state with its parent."""
        return RngStream(self.seed, _combine(self.stream_id, sub_id))


def _combine(a: int, b: int) -> int:
    # Cantor pairing keeps derived ids unique and non-negative.
    return (a + b) * (a + b + 1) // 2 + b


def worker_batch_stream(seed: int, worker: int) -> RngStream:
    return RngStream(seed, _combine(worker, _PURPOSE_BATCH))


def worker_pull_stream(seed: int, worker: int) -> RngStream:
    return RngStream(seed, _combine(worker, _PURPOSE_PULL))


def bernoulli(stream: RngStream, p: float) -> bool:
    """One coin flip with success probability ``p``; consumes one draw."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability must lie in [0, 1], got {p}")
    return stream.uniform() < p
