"""Replay buffer that evicts the oldest sample near each incoming one.

On insertion the buffer finds stored entries whose embedding lies within
`d_local` of the new sample's embedding; once that neighborhood holds at
least `n_local` entries, the oldest member is evicted to make room for the
new one. This keeps stale data from accumulating where new data arrives
while leaving rarely-visited regions untouched. The neighborhood search is
an exact linear scan per insertion, which is the cost profile this baseline
is known for.
"""
from __future__ import annotations

import numpy as np

from .stores import Batch, _Columns
from .transitions import Transition


class LofoBuffer:
    def __init__(self, capacity: int, obs_dim: int, emb_dim: int,
                 d_local: float, n_local: int = 1):
        self.capacity = capacity
        self.cols = _Columns(capacity, obs_dim)
        self.emb = np.zeros((capacity, emb_dim))
        self.stamps = np.zeros(capacity, dtype=np.int64)
        self.size = 0
        self.t = 0
        self.d_local = d_local
        self.n_local = n_local
        self.evictions = 0

    def insert(self, tr: Transition, emb: np.ndarray) -> int | None:
        """Insert with the embedding computed now; returns the evicted slot.

        Neighborhood eviction removes the minimum-timestamp member; a full
        buffer with no neighborhood falls back to global-oldest eviction.
        """
        evicted = None
        if self.size > 0:
            diff = self.emb[:self.size] - emb
            d2 = np.einsum("ij,ij->i", diff, diff)
            hood = np.flatnonzero(d2 < self.d_local * self.d_local)
            if hood.size >= self.n_local:
                evicted = int(hood[np.argmin(self.stamps[hood])])
        if evicted is None and self.size == self.capacity:
            evicted = int(np.argmin(self.stamps[:self.size]))
        if evicted is not None:
            slot = evicted
            self.evictions += 1
        else:
            slot = self.size
            self.size += 1
        self.cols.write(slot, tr)
        self.emb[slot] = emb
        self.stamps[slot] = self.t
        self.t += 1
        return evicted

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch | None:
        if self.size == 0:
            return None
        idx = rng.integers(0, self.size, size=batch_size)
        return self.cols.gather(idx, 0)

    def rewards_view(self) -> np.ndarray:
        return self.cols.rewards[:self.size]
