"""Chunked pass execution with deterministic sharded reduction.

Every estimator pass folds an accumulator state over the dataset's chunk
stream.  States form a commutative monoid (``update`` with a chunk,
``merge`` with another state); chunks are assigned round-robin to shard
states and partials are merged in shard order, so results depend only on
the chunk sequence and the shard count, never on scheduling.
"""

from __future__ import annotations

import numpy as np

DEFAULT_CHUNK_RECORDS = 65536


class KahanSum:
    """Elementwise compensated (error-carrying) accumulator."""

    __slots__ = ("total", "_c")

    def __init__(self, shape=()):
        self.total = np.zeros(shape, dtype=float)
        self._c = np.zeros(shape, dtype=float)

    def add(self, x) -> None:
        y = np.asarray(x, dtype=float) - self._c
        t = self.total + y
        self._c = (t - self.total) - y
        self.total = t

    def merge(self, other: "KahanSum") -> None:
        self.add(other.total)
        self.add(-other._c)


class Reduction:
    """How a pass reduces its chunk stream.

    ``shards=k`` splits accumulation across k partial states merged in shard
    order.  ``deterministic`` forces a single state in chunk order, which is
    bitwise identical to ``shards=1`` regardless of k.
    """

    __slots__ = ("shards", "deterministic", "chunk_records")

    def __init__(self, shards: int = 1, deterministic: bool = False,
                 chunk_records: int | None = None):
        self.shards = max(1, int(shards))
        self.deterministic = bool(deterministic)
        self.chunk_records = chunk_records or DEFAULT_CHUNK_RECORDS


def run_pass(dataset, state_factory, reduction: Reduction | None = None):
    """Fold ``state_factory()`` instances over one scan of ``dataset``.

    Returns the merged state.  The state protocol is ``update(chunk)`` and
    ``merge(other)``.
    """
    red = reduction or Reduction()
    k = 1 if red.deterministic else red.shards
    states = [state_factory() for _ in range(k)]
    for i, chunk in enumerate(dataset.scan(red.chunk_records)):
        states[i % k].update(chunk)
    head = states[0]
    for s in states[1:]:
        head.merge(s)
    return head
