"""Shared vector types, metrics, deterministic RNG, and the exhaustive-scan oracle."""

from __future__ import annotations

import hashlib
import random
from bisect import bisect_left
from dataclasses import dataclass
from enum import Enum
from itertools import accumulate
from typing import Iterable, Sequence

import numpy as np

from ecovector import kernels
from ecovector.errors import DimensionMismatch, ZeroVector


class Metric(str, Enum):
    L2 = "l2"
    INNER_PRODUCT = "ip"
    COSINE = "cosine"


def as_f32(values) -> np.ndarray:
    """Coerce to a C-contiguous float32 1-D array (the kernel calling convention)."""
    arr = np.ascontiguousarray(values, dtype=np.float32)
    if arr.ndim != 1:
        raise DimensionMismatch(f"expected a 1-D vector, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class VectorRecord:
    """An id paired with its float32 embedding."""

    id: int
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", as_f32(self.values))
        if self.id < 0:
            raise ValueError(f"vector id must be non-negative, got {self.id}")


class RngState:
    """Deterministic random source.

    Only ``random.Random.random()`` is consumed, which CPython guarantees to
    yield the same sequence for the same seed across versions and platforms.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._rand = random.Random(self.seed)

    def random(self) -> float:
        """Uniform draw in [0, 1)."""
        return self._rand.random()

    def uniform_index(self, n: int) -> int:
        """Uniform draw from range(n)."""
        if n <= 0:
            raise ValueError("uniform_index needs n >= 1")
        return min(int(self.random() * n), n - 1)

    def weighted_index(self, weights: Sequence[float]) -> int:
        """Draw an index with probability proportional to its weight."""
        cum = list(accumulate(weights))
        total = cum[-1]
        if total <= 0:
            return self.uniform_index(len(weights))
        return min(bisect_left(cum, self.random() * total), len(cum) - 1)

    def fork(self, tag: str) -> "RngState":
        """Independent child stream derived from (seed, tag)."""
        digest = hashlib.sha256(f"{self.seed}:{tag}".encode()).digest()
        return RngState(int.from_bytes(digest[:8], "little"))


def _check_dims(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape[0] != b.shape[0]:
        raise DimensionMismatch(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")


def _values(v) -> np.ndarray:
    return v.values if isinstance(v, VectorRecord) else as_f32(v)


def distance(a, b, metric: Metric = Metric.L2) -> float:
    """Distance between two vectors under the given metric.

    L2 returns the squared Euclidean distance (order-equivalent to Euclidean
    and cheaper). InnerProduct returns 1 - <a, b>, intended for unit-normalized
    vectors where it equals cosine distance; it ranks by -<a, b> regardless.
    Cosine returns 1 - cos(a, b) and rejects zero vectors.
    """
    av, bv = _values(a), _values(b)
    _check_dims(av, bv)
    if metric == Metric.L2:
        return float(kernels.l2_sq(av, bv))
    if metric == Metric.INNER_PRODUCT:
        return float(kernels.ip_dist(av, bv))
    try:
        return float(kernels.cosine_dist(av, bv))
    except ValueError as exc:
        raise ZeroVector(str(exc)) from None


def distance_batch(query, matrix: np.ndarray, metric: Metric = Metric.L2) -> np.ndarray:
    """Distances from one query to each row of a float32 matrix."""
    qv = _values(query)
    if matrix.ndim != 2:
        raise DimensionMismatch(f"expected a 2-D matrix, got shape {matrix.shape}")
    mat = np.ascontiguousarray(matrix, dtype=np.float32)
    if mat.shape[1] != qv.shape[0]:
        raise DimensionMismatch(f"dimension mismatch: {qv.shape[0]} vs {mat.shape[1]}")
    if metric == Metric.L2:
        return kernels.l2_sq_batch(qv, mat)
    if metric == Metric.INNER_PRODUCT:
        return kernels.ip_dist_batch(qv, mat)
    try:
        return kernels.cosine_dist_batch(qv, mat)
    except ValueError as exc:
        raise ZeroVector(str(exc)) from None


def brute_force_topk(
    query,
    corpus: Iterable[VectorRecord],
    k: int,
    metric: Metric = Metric.L2,
) -> list[tuple[int, float]]:
    """Exhaustive-scan top-k: ascending distance, ties broken by smaller id.

    This is the reference oracle that graph-based search is checked against.
    """
    if k <= 0:
        raise ValueError(f"k must be positive, got {k}")
    records = list(corpus)
    if not records:
        return []
    ids = np.fromiter((r.id for r in records), dtype=np.int64, count=len(records))
    matrix = np.stack([r.values for r in records])
    dists = distance_batch(query, matrix, metric)
    order = np.lexsort((ids, dists))[:k]
    return [(int(ids[i]), float(dists[i])) for i in order]
