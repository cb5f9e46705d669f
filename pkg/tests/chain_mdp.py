"""Enumerable 5-state deterministic chain used as an oracle for the critics.

States sit on a line; the two actions move one position left or right
(clipped at the ends). Landing on the goal state pays reward 1, landing on
the unsafe state costs 1 — both computed on the next state, matching the
environments' convention. Small enough to solve exactly by dynamic
programming.
"""

from __future__ import annotations

import numpy as np

N_STATES = 5
GOAL_STATE = 4
UNSAFE_STATE = 2
ACTIONS = (-1.0, 1.0)

OBS_DIM = N_STATES
GOAL_DIM = N_STATES
ACTION_DIM = 1


def one_hot(state: int) -> np.ndarray:
    v = np.zeros(N_STATES)
    v[state] = 1.0
    return v


def next_state(state: int, action: float) -> int:
    return int(np.clip(state + (1 if action > 0 else -1), 0, N_STATES - 1))


def reward(state: int, action: float) -> int:
    return int(next_state(state, action) == GOAL_STATE)


def cost(state: int, action: float) -> int:
    return int(next_state(state, action) == UNSAFE_STATE)


class FixedChainPolicy:
    """Stub policy net: always emits the same scalar action."""

    def __init__(self, action: float = 1.0):
        self.action = float(action)

    def forward(self, inputs: np.ndarray) -> np.ndarray:
        n = len(np.atleast_2d(inputs))
        return np.full((n, ACTION_DIM), self.action)


def all_pairs_batch() -> dict:
    """One batch holding every (state, action) pair exactly once."""
    obs, actions, rewards, costs, next_obs = [], [], [], [], []
    for s in range(N_STATES):
        for a in ACTIONS:
            obs.append(one_hot(s))
            actions.append([a])
            rewards.append(reward(s, a))
            costs.append(cost(s, a))
            next_obs.append(one_hot(next_state(s, a)))
    n = len(obs)
    goal = np.tile(one_hot(GOAL_STATE), (n, 1))
    return {
        "obs": np.asarray(obs),
        "action": np.asarray(actions, dtype=float),
        "reward": np.asarray(rewards, dtype=float),
        "cost": np.asarray(costs, dtype=float),
        "next_obs": np.asarray(next_obs),
        "goal": goal,
        "gap": np.zeros(n, dtype=int),
        "terminal": np.zeros(n, dtype=bool),
    }


def dp_reward_fixed_point(gamma: float, tol: float = 1e-12) -> np.ndarray:
    """Value iteration for Q(s, a) = r + gamma * (1 - r) * max_a' Q(s', a')."""
    q = np.zeros((N_STATES, len(ACTIONS)))
    while True:
        q_new = np.zeros_like(q)
        for s in range(N_STATES):
            for ai, a in enumerate(ACTIONS):
                r = reward(s, a)
                nxt = next_state(s, a)
                q_new[s, ai] = r + gamma * (1 - r) * q[nxt].max()
        if np.abs(q_new - q).max() < tol:
            return q_new
        q = q_new


def dp_cost_fixed_point(gamma: float, policy_action: float = 1.0, tol: float = 1e-12) -> np.ndarray:
    """Exact solution of Q_C(s, a) = c + (1 - c) * gamma * Q_C(s', pi(s'))."""
    pi_idx = ACTIONS.index(policy_action)
    q = np.zeros((N_STATES, len(ACTIONS)))
    while True:
        q_new = np.zeros_like(q)
        for s in range(N_STATES):
            for ai, a in enumerate(ACTIONS):
                c = cost(s, a)
                nxt = next_state(s, a)
                q_new[s, ai] = c + (1 - c) * gamma * q[nxt, pi_idx]
        if np.abs(q_new - q).max() < tol:
            return q_new
        q = q_new


def critic_q_table(critic) -> np.ndarray:
    """Evaluate a fitted critic at every (state, action) pair."""
    from rbsl.losses import critic_inputs

    table = np.zeros((N_STATES, len(ACTIONS)))
    for s in range(N_STATES):
        for ai, a in enumerate(ACTIONS):
            x = critic_inputs(one_hot(s), np.array([a]), one_hot(GOAL_STATE))
            table[s, ai] = critic.forward(x)[0, 0]
    return table
