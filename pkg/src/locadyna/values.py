"""Exact optimal values for the grid environment via value iteration.

Serves as the harness's "maximum possible return" reference line and as an
oracle in tests. Uses expected rewards (the Gaussian variants share means
with the deterministic one) and the true phase-dependent transition
distribution, including zone blocking and the slippery zone. The episode
step cap is ignored: optimal paths terminate far below it.
"""
from __future__ import annotations

import numpy as np

from .envs import (GridEnv, Phase, Region, Variant, in_zone, reward_mean,
                   SLIP_PROB)
from .errors import UnsupportedOperationError


def _transition_matrix(env: GridEnv, variant: Variant, phase: Phase) -> np.ndarray:
    """Dense P[s, a, s'] over flattened grid cells."""
    n = env.size * env.size
    idx = {s: i for i, s in enumerate(env.all_states())}

    def blocked_next(state, action):
        nxt = env._dynamics(state, action)
        if (phase == Phase.TWO and in_zone(env.region_of(state))
                and not in_zone(env.region_of(nxt))):
            return state
        return nxt

    P = np.zeros((n, env.n_actions, n))
    for s in env.all_states():
        i = idx[s]
        slippery = (variant == Variant.LOCA2 and phase == Phase.TWO
                    and in_zone(env.region_of(s)))
        for a in range(env.n_actions):
            j = idx[blocked_next(s, a)]
            if not slippery:
                P[i, a, j] = 1.0
            else:
                P[i, a, j] += 1.0 - SLIP_PROB
                for a2 in range(env.n_actions):
                    P[i, a, idx[blocked_next(s, a2)]] += SLIP_PROB / env.n_actions
    return P


def optimal_state_values(env, variant: Variant, phase: Phase,
                         gamma: float = 0.99, tol: float = 1e-8) -> np.ndarray:
    """(size, size) table of optimal discounted values; grid only."""
    if not isinstance(env, GridEnv):
        raise UnsupportedOperationError("optimal values are only defined for the grid")
    n = env.size * env.size
    states = env.all_states()
    terminal = np.array([env.region_of(s) in (Region.T1, Region.T2) for s in states])
    rbar = np.array([reward_mean(env.region_of(s), phase) for s in states])
    P = _transition_matrix(env, variant, phase)

    V = np.zeros(n)
    while True:
        target = rbar + gamma * np.where(terminal, 0.0, V)
        Q = P @ target
        V_new = Q.max(axis=1)
        V_new[terminal] = 0.0
        if np.max(np.abs(V_new - V)) < tol:
            return V_new.reshape(env.size, env.size)
        V = V_new


def greedy_policy(env: GridEnv, values: np.ndarray, variant: Variant,
                  phase: Phase, gamma: float = 0.99) -> np.ndarray:
    """(size, size) action table that is greedy w.r.t. a value table."""
    n = env.size * env.size
    states = env.all_states()
    terminal = np.array([env.region_of(s) in (Region.T1, Region.T2) for s in states])
    rbar = np.array([reward_mean(env.region_of(s), phase) for s in states])
    P = _transition_matrix(env, variant, phase)
    target = rbar + gamma * np.where(terminal, 0.0, values.reshape(-1))
    return (P @ target).argmax(axis=1).reshape(env.size, env.size)


def optimal_eval_return(env, variant: Variant, phase: Phase,
                        gamma: float = 0.99) -> float:
    """Mean optimal value over the evaluation start distribution (grid only).

    Returns NaN for environments without an exact oracle; the harness writes
    it through to the metrics as the reference column.
    """
    if not isinstance(env, GridEnv):
        return float("nan")
    V = optimal_state_values(env, variant, phase, gamma=gamma)
    starts = env._nonterminal
    return float(np.mean([V[r, c] for r, c in starts]))
