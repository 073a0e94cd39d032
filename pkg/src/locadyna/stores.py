"""Replay storage for partial models.

Two schemes with one sampling contract:

* SimpleStore — one ring buffer per cluster (plus one world model each,
  owned by the agent). Per-cluster capacity is the total capacity divided
  by the initial cluster count, keeping aggregate memory comparable to a
  single-buffer agent.
* ScalableStore — a single ring buffer plus one index list of insertion
  timestamps per cluster. Clearing a cluster empties its list and
  tombstones the referenced slots; tombstones are reclaimed lazily when the
  ring wraps onto them. Timestamps are int32, which bounds runs at 2^31
  steps.

Both uphold the partition invariant: every live entry is reachable through
exactly one cluster.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .transitions import Transition


@dataclass
class Batch:
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    done: np.ndarray
    cluster_id: int

    def __len__(self) -> int:
        return self.obs.shape[0]


class _Columns:
    def __init__(self, capacity: int, obs_dim: int):
        self.obs = np.zeros((capacity, obs_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.next_obs = np.zeros((capacity, obs_dim))
        self.done = np.zeros(capacity)

    def write(self, i: int, tr: Transition) -> None:
        self.obs[i] = tr.obs
        self.actions[i] = tr.action
        self.rewards[i] = tr.reward
        self.next_obs[i] = tr.next_obs
        self.done[i] = 1.0 if tr.done else 0.0

    def gather(self, idx: np.ndarray, cluster_id: int) -> Batch:
        return Batch(self.obs[idx], self.actions[idx], self.rewards[idx],
                     self.next_obs[idx], self.done[idx], cluster_id)


class IndexList:
    """Append-only int32 timestamp list with O(1) pop-front and lazy compaction."""

    def __init__(self, reserve: int = 64):
        self._buf = np.zeros(reserve, dtype=np.int32)
        self._head = 0
        self._tail = 0

    def __len__(self) -> int:
        return self._tail - self._head

    def append(self, ts: int) -> None:
        if self._tail == self._buf.size:
            live = self._buf[self._head:self._tail]
            if self._head > self._buf.size // 2:
                self._buf[:live.size] = live
            else:
                grown = np.zeros(max(64, int(self._buf.size * 1.5)), dtype=np.int32)
                grown[:live.size] = live
                self._buf = grown
            self._tail -= self._head
            self._head = 0
        self._buf[self._tail] = ts
        self._tail += 1

    def popleft_if(self, ts: int) -> bool:
        if self._head < self._tail and self._buf[self._head] == ts:
            self._head += 1
            return True
        return False

    def view(self) -> np.ndarray:
        return self._buf[self._head:self._tail]

    def clear(self) -> None:
        self._head = self._tail = 0


class ScalableStore:
    """One buffer, n index lists, n reward heads on one model (owned by the agent)."""

    def __init__(self, capacity: int, obs_dim: int, cluster_ids):
        if capacity < 1:
            raise ContractError("capacity must be positive")
        self.capacity = capacity
        self.cols = _Columns(capacity, obs_dim)
        self.cluster_of = np.full(capacity, -1, dtype=np.int8)
        self.lists: dict[int, IndexList] = {int(k): IndexList() for k in cluster_ids}
        self.t = 0
        self.evictions = 0
        self.dead = 0

    def add_cluster(self, k: int) -> None:
        if k in self.lists:
            raise ContractError(f"cluster {k} already exists")
        self.lists[k] = IndexList()

    def assign(self, tr: Transition, k: int) -> None:
        if k not in self.lists:
            raise ContractError(f"unknown cluster id {k}")
        slot = self.t % self.capacity
        old = self.cluster_of[slot]
        if old >= 0:
            # FIFO eviction: the overwritten entry is the front of its list.
            if not self.lists[int(old)].popleft_if(self.t - self.capacity):
                raise ContractError("index-list eviction mismatch")
            self.evictions += 1
        elif self.t >= self.capacity:
            self.dead -= 1
        self.cols.write(slot, tr)
        self.cluster_of[slot] = k
        self.lists[k].append(self.t)
        self.t += 1

    def sample_batch(self, k: int, batch_size: int,
                     rng: np.random.Generator) -> Batch | None:
        """Uniform with replacement within cluster k; None when k is empty."""
        if k not in self.lists:
            raise ContractError(f"unknown cluster id {k}")
        ts = self.lists[k].view()
        if ts.size == 0:
            return None
        slots = ts[rng.integers(0, ts.size, size=batch_size)] % self.capacity
        return self.cols.gather(slots, k)

    def clear(self, k: int) -> None:
        if k not in self.lists:
            raise ContractError(f"unknown cluster id {k}")
        ts = self.lists[k].view()
        slots = ts.astype(np.int64) % self.capacity
        self.cluster_of[slots] = -1
        self.dead += ts.size
        self.lists[k].clear()

    def live_entries(self, k: int) -> Batch:
        ts = self.lists[k].view()
        slots = ts.astype(np.int64) % self.capacity
        return self.cols.gather(slots, k)

    def sizes(self) -> dict[int, int]:
        return {k: len(lst) for k, lst in self.lists.items()}

    def stats(self) -> dict:
        return {"sizes": self.sizes(), "evictions": self.evictions,
                "dead": self.dead}


class RingBuffer:
    def __init__(self, capacity: int, obs_dim: int):
        self.capacity = capacity
        self.cols = _Columns(capacity, obs_dim)
        self.ptr = 0
        self.size = 0
        self.evictions = 0

    def insert(self, tr: Transition) -> None:
        if self.size == self.capacity:
            self.evictions += 1
        self.cols.write(self.ptr, tr)
        self.ptr = (self.ptr + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator,
               cluster_id: int) -> Batch | None:
        if self.size == 0:
            return None
        idx = rng.integers(0, self.size, size=batch_size)
        return self.cols.gather(idx, cluster_id)

    def clear(self) -> None:
        self.ptr = 0
        self.size = 0

    def live(self, cluster_id: int) -> Batch:
        return self.cols.gather(np.arange(self.size), cluster_id)


class SimpleStore:
    """n independent ring buffers, one per cluster."""

    def __init__(self, capacity: int, obs_dim: int, cluster_ids):
        ids = [int(k) for k in cluster_ids]
        if capacity < len(ids):
            raise ContractError("capacity below one slot per cluster")
        self.obs_dim = obs_dim
        self.per_buffer = max(1, capacity // max(1, len(ids)))
        self.buffers: dict[int, RingBuffer] = {
            k: RingBuffer(self.per_buffer, obs_dim) for k in ids}

    def add_cluster(self, k: int) -> None:
        if k in self.buffers:
            raise ContractError(f"cluster {k} already exists")
        self.buffers[k] = RingBuffer(self.per_buffer, self.obs_dim)

    def assign(self, tr: Transition, k: int) -> None:
        if k not in self.buffers:
            raise ContractError(f"unknown cluster id {k}")
        self.buffers[k].insert(tr)

    def sample_batch(self, k: int, batch_size: int,
                     rng: np.random.Generator) -> Batch | None:
        if k not in self.buffers:
            raise ContractError(f"unknown cluster id {k}")
        return self.buffers[k].sample(batch_size, rng, k)

    def clear(self, k: int) -> None:
        if k not in self.buffers:
            raise ContractError(f"unknown cluster id {k}")
        self.buffers[k].clear()

    def live_entries(self, k: int) -> Batch:
        return self.buffers[k].live(k)

    def sizes(self) -> dict[int, int]:
        return {k: b.size for k, b in self.buffers.items()}

    def stats(self) -> dict:
        return {"sizes": self.sizes(),
                "evictions": sum(b.evictions for b in self.buffers.values()),
                "dead": 0}
