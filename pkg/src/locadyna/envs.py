"""MountainCar and grid environments with local-change reward/transition variants.

Both environments have two rewarding terminal regions, T1 and T2, and a
"T1-zone" around T1. The experiment runs in two phases: T1's reward drops
from +4 to +1 at the phase switch, training resets move inside the zone,
and the zone becomes impossible to leave. The observation carries no phase
information. Variants: deterministic rewards (LOCA), Gaussian rewards with
sigma 0.5 (LOCA1), plus a slippery zone with slip probability 0.2 in phase
two (LOCA2).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ContractError

REWARD_SIGMA = 0.5
SLIP_PROB = 0.2


class Region(enum.Enum):
    T1 = "t1"
    T2 = "t2"
    T1_ZONE = "t1_zone"
    OTHER = "other"


class Variant(enum.Enum):
    LOCA = "loca"
    LOCA1 = "loca1"
    LOCA2 = "loca2"


class Phase(enum.IntEnum):
    ONE = 1
    TWO = 2


def reward_mean(region: Region, phase: Phase) -> float:
    if region == Region.T1:
        return 4.0 if phase == Phase.ONE else 1.0
    if region == Region.T2:
        return 2.0
    return 0.0


def reward_sample(region: Region, phase: Phase, variant: Variant,
                  rng: np.random.Generator) -> float:
    mean = reward_mean(region, phase)
    if variant == Variant.LOCA:
        return mean
    return float(rng.normal(mean, REWARD_SIGMA))


def in_zone(region: Region) -> bool:
    # T1 is a subset of the zone.
    return region in (Region.T1, Region.T1_ZONE)


@dataclass(frozen=True)
class MountainCarGeometry:
    min_position: float = -1.2
    max_position: float = 0.6
    max_speed: float = 0.07
    force: float = 0.001
    gravity: float = 0.0025
    t1_min_position: float = 0.5          # T1: position > 0.5 and velocity > 0
    t2_center: float = -0.52              # T2: (p + 0.52)^2 + 100 v^2 <= 0.07^2
    t2_radius: float = 0.07
    zone_min_position: float = 0.4        # zone box: 0.4 <= p <= 0.5, 0 <= v
    zone_max_position: float = 0.5


class MountainCarEnv:
    """Classical underpowered-cart dynamics with the two-region reward layout."""

    n_actions = 3   # reverse, coast, forward
    obs_dim = 2
    max_episode_steps = 500

    def __init__(self, geometry: MountainCarGeometry | None = None):
        self.geom = geometry or MountainCarGeometry()

    def region_of(self, state) -> Region:
        p, v = float(state[0]), float(state[1])
        g = self.geom
        if p > g.t1_min_position and v > 0.0:
            return Region.T1
        if (p - g.t2_center) ** 2 + 100.0 * v * v <= g.t2_radius ** 2:
            return Region.T2
        if g.zone_min_position <= p <= g.zone_max_position and 0.0 <= v <= g.max_speed:
            return Region.T1_ZONE
        return Region.OTHER

    def _dynamics(self, state, action: int):
        p, v = float(state[0]), float(state[1])
        g = self.geom
        v = v + (action - 1) * g.force - g.gravity * np.cos(3.0 * p)
        v = min(max(v, -g.max_speed), g.max_speed)
        p = p + v
        if p < g.min_position:
            p, v = g.min_position, 0.0
        elif p > g.max_position:
            p = g.max_position
        return np.array([p, v])

    def step(self, state, action: int, phase: Phase, variant: Variant,
             rng: np.random.Generator):
        if not 0 <= action < self.n_actions:
            raise ContractError(f"invalid action {action!r}")
        cur_region = self.region_of(state)
        if (variant == Variant.LOCA2 and phase == Phase.TWO
                and in_zone(cur_region)):
            if rng.random() < SLIP_PROB:
                action = int(rng.integers(self.n_actions))
        nxt = self._dynamics(state, action)
        if (phase == Phase.TWO and in_zone(cur_region)
                and not in_zone(self.region_of(nxt))):
            nxt = np.array(state, dtype=float)
        region = self.region_of(nxt)
        done = region in (Region.T1, Region.T2)
        reward = reward_sample(region, phase, variant, rng)
        return nxt, reward, done

    def reset(self, mode: str, phase: Phase, rng: np.random.Generator):
        g = self.geom
        if mode == "eval":
            return np.array([rng.uniform(-0.2, -0.1), rng.uniform(-0.01, 0.01)])
        if mode != "train":
            raise ContractError(f"unknown reset mode {mode!r}")
        if phase == Phase.TWO:
            return np.array([rng.uniform(g.zone_min_position, g.zone_max_position),
                             rng.uniform(0.0, g.max_speed)])
        while True:
            s = np.array([rng.uniform(g.min_position, g.max_position),
                          rng.uniform(-g.max_speed, g.max_speed)])
            if self.region_of(s) not in (Region.T1, Region.T2):
                return s

    def observe(self, state) -> np.ndarray:
        g = self.geom
        return np.array([(state[0] - g.min_position) / (g.max_position - g.min_position),
                         (state[1] + g.max_speed) / (2.0 * g.max_speed)])


class GridEnv:
    """N x N grid; T1 top-left, T2 bottom-right, zone = top-left 2x2 subgrid.

    States are (row, col) int pairs; the observation is the normalized pair.
    """

    n_actions = 4   # up, down, left, right
    obs_dim = 2
    max_episode_steps = 100
    _moves = ((-1, 0), (1, 0), (0, -1), (0, 1))

    def __init__(self, size: int = 12):
        if size < 4:
            raise ContractError("grid too small for a 2x2 zone plus T2")
        self.size = size
        self.t1 = (0, 0)
        self.t2 = (size - 1, size - 1)
        self._nonterminal = [(r, c) for r in range(size) for c in range(size)
                             if (r, c) not in (self.t1, self.t2)]
        self._zone_starts = [(r, c) for r in range(2) for c in range(2)
                             if (r, c) != self.t1]

    def region_of(self, state) -> Region:
        cell = (int(state[0]), int(state[1]))
        if cell == self.t1:
            return Region.T1
        if cell == self.t2:
            return Region.T2
        if cell[0] < 2 and cell[1] < 2:
            return Region.T1_ZONE
        return Region.OTHER

    def _dynamics(self, state, action: int):
        dr, dc = self._moves[action]
        r = min(max(int(state[0]) + dr, 0), self.size - 1)
        c = min(max(int(state[1]) + dc, 0), self.size - 1)
        return (r, c)

    def step(self, state, action: int, phase: Phase, variant: Variant,
             rng: np.random.Generator):
        if not 0 <= action < self.n_actions:
            raise ContractError(f"invalid action {action!r}")
        cur_region = self.region_of(state)
        if (variant == Variant.LOCA2 and phase == Phase.TWO
                and in_zone(cur_region)):
            if rng.random() < SLIP_PROB:
                action = int(rng.integers(self.n_actions))
        nxt = self._dynamics(state, action)
        if (phase == Phase.TWO and in_zone(cur_region)
                and not in_zone(self.region_of(nxt))):
            nxt = (int(state[0]), int(state[1]))
        region = self.region_of(nxt)
        done = region in (Region.T1, Region.T2)
        reward = reward_sample(region, phase, variant, rng)
        return nxt, reward, done

    def reset(self, mode: str, phase: Phase, rng: np.random.Generator):
        if mode == "eval":
            return self._nonterminal[rng.integers(len(self._nonterminal))]
        if mode != "train":
            raise ContractError(f"unknown reset mode {mode!r}")
        if phase == Phase.TWO:
            return self._zone_starts[rng.integers(len(self._zone_starts))]
        return self._nonterminal[rng.integers(len(self._nonterminal))]

    def observe(self, state) -> np.ndarray:
        d = self.size - 1
        return np.array([state[0] / d, state[1] / d])

    def all_states(self):
        return [(r, c) for r in range(self.size) for c in range(self.size)]


def make_env(name: str, grid_size: int = 12):
    if name == "grid":
        return GridEnv(size=grid_size)
    if name == "mountaincar":
        return MountainCarEnv()
    raise ContractError(f"unknown environment {name!r}")


class EnvSession:
    """Stateful episode wrapper; the harness owns the phase, the agent never sees it."""

    def __init__(self, env, variant: Variant, rng: np.random.Generator,
                 mode: str = "train"):
        self.env = env
        self.variant = variant
        self.rng = rng
        self.mode = mode
        self.phase = Phase.ONE
        self.steps_taken = 0
        self.state = None
        self._episode_steps = 0
        self.needs_reset = True

    def set_phase(self, phase: Phase) -> None:
        self.phase = phase

    def reset(self) -> np.ndarray:
        self.state = self.env.reset(self.mode, self.phase, self.rng)
        self._episode_steps = 0
        self.needs_reset = False
        return self.env.observe(self.state)

    def current_obs(self) -> np.ndarray:
        return self.env.observe(self.state)

    def step(self, action: int):
        """Returns (state, obs, next_state, next_obs, reward, done, truncated)."""
        state = self.state
        nxt, reward, done = self.env.step(state, action, self.phase,
                                          self.variant, self.rng)
        self.steps_taken += 1
        self._episode_steps += 1
        truncated = (not done) and self._episode_steps >= self.env.max_episode_steps
        obs = self.env.observe(state)
        next_obs = self.env.observe(nxt)
        self.state = nxt
        if done or truncated:
            self.needs_reset = True
        return state, obs, nxt, next_obs, reward, done, truncated
