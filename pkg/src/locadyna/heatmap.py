"""Reward-prediction heatmaps over a state lattice.

For every lattice state the responsible partial model's reward head is
queried for the reward predicted upon arriving there; with partial models,
responsibility is resolved by the classifier fed the state's true region
reward for the requested phase (falling back to the nearest embedding
center). Reward heads are arrival-state functions, so the per-action
predictions coincide and the max over actions equals the head's value.
"""
from __future__ import annotations

import csv

import numpy as np

from .agents import DynaAgent, PM_KINDS
from .envs import GridEnv, MountainCarEnv, Phase, reward_mean
from .errors import ContractError


def lattice(env, resolution: int):
    """(states, observations, shape) of the query lattice.

    The grid uses its own cells; MountainCar uses a resolution^2
    position-by-velocity lattice with velocity descending row-wise so the
    written matrix reads like the usual position/velocity picture.
    """
    if isinstance(env, GridEnv):
        states = env.all_states()
        obs = np.stack([env.observe(s) for s in states])
        return states, obs, (env.size, env.size)
    if isinstance(env, MountainCarEnv):
        g = env.geom
        ps = np.linspace(g.min_position, g.max_position, resolution)
        vs = np.linspace(g.max_speed, -g.max_speed, resolution)
        states = [(p, v) for v in vs for p in ps]
        obs = np.stack([env.observe(s) for s in states])
        return states, obs, (resolution, resolution)
    raise ContractError(f"no lattice for {type(env).__name__}")


def oracle_heatmap(env, phase: Phase, resolution: int = 40) -> np.ndarray:
    """Ground-truth arrival rewards per lattice state (the 'optimal' panel)."""
    states, _, shape = lattice(env, resolution)
    vals = np.array([reward_mean(env.region_of(s), phase) for s in states])
    return vals.reshape(shape)


def emit_heatmap(agent: DynaAgent, env, phase: Phase,
                 resolution: int = 40) -> np.ndarray:
    """Max-over-action predicted arrival reward per lattice state."""
    if not agent._bootstrapped:
        raise ContractError("agent has no trained models to visualize")
    states, obs, shape = lattice(env, resolution)
    if agent.kind in PM_KINDS:
        true_r = np.array([reward_mean(env.region_of(s), phase) for s in states])
        ids = agent.cluster_state.assign_batch(obs, true_r)
        out = np.empty(len(states))
        for k in np.unique(ids):
            rows = ids == k
            if agent.kind == "pm_scalable":
                out[rows] = agent.model.reward_at(obs[rows], agent.head_of[int(k)])
            else:
                out[rows] = agent.models[int(k)].reward_at(obs[rows], 0)
        return out.reshape(shape)
    return agent.model.reward_at(obs, 0).reshape(shape)


def save_heatmap_csv(path, matrix: np.ndarray) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        for row in matrix:
            w.writerow([repr(float(x)) for x in row])


def load_heatmap_csv(path) -> np.ndarray:
    with open(path, newline="") as f:
        return np.array([[float(x) for x in row] for row in csv.reader(f)])
