"""The environment-step record and a flat dataset container."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Transition:
    """One step: observation, action, reward, next observation, done flag.

    `done` marks true environment termination only; hitting the episode step
    cap sets `truncated` instead, so model learning never treats truncation
    as termination.
    """
    obs: np.ndarray
    action: int
    reward: float
    next_obs: np.ndarray
    done: bool
    truncated: bool = False


class TransitionDataset:
    """Preallocated column arrays for a fixed number of transitions."""

    def __init__(self, capacity: int, obs_dim: int):
        self.obs = np.zeros((capacity, obs_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.next_obs = np.zeros((capacity, obs_dim))
        self.done = np.zeros(capacity)
        self.count = 0

    def add(self, tr: Transition) -> None:
        i = self.count
        self.obs[i] = tr.obs
        self.actions[i] = tr.action
        self.rewards[i] = tr.reward
        self.next_obs[i] = tr.next_obs
        self.done[i] = 1.0 if tr.done else 0.0
        self.count += 1

    def trimmed(self):
        n = self.count
        return (self.obs[:n], self.actions[:n], self.rewards[:n],
                self.next_obs[:n], self.done[:n])

    def __len__(self) -> int:
        return self.count
