"""Loss functions shared by the trainers.

Every function returns the scalar loss together with analytic parameter
gradients for exactly one network, holding everything else fixed, so each one
can be checked against central finite differences.
"""

from __future__ import annotations

import numpy as np

from .nets import Mlp, backprop


def policy_inputs(obs: np.ndarray, goal: np.ndarray) -> np.ndarray:
    return np.concatenate([np.atleast_2d(obs), np.atleast_2d(goal)], axis=-1)


def critic_inputs(obs: np.ndarray, action: np.ndarray, goal: np.ndarray) -> np.ndarray:
    return np.concatenate(
        [np.atleast_2d(obs), np.atleast_2d(action), np.atleast_2d(goal)], axis=-1
    )


def critic_td_loss(critic: Mlp, inputs: np.ndarray, targets: np.ndarray) -> tuple[float, list]:
    """Mean squared error of Q(inputs) against fixed targets."""
    targets = np.asarray(targets, dtype=float).reshape(-1, 1)
    q, cache = critic.forward_cached(inputs)
    err = q - targets
    n = len(err)
    grads, _ = backprop(critic, cache, 2.0 * err / n)
    return float(np.mean(err**2)), grads


def critic_td_loss_with_penalty(
    critic: Mlp,
    inputs: np.ndarray,
    targets: np.ndarray,
    negative_inputs: np.ndarray,
    penalty_weight: float,
) -> tuple[float, list]:
    """TD regression plus a zero-target penalty on out-of-distribution actions:
    MSE(Q(x), y) + penalty_weight * mean(Q(x_neg)^2)."""
    loss, grads = critic_td_loss(critic, inputs, targets)
    if penalty_weight > 0 and len(negative_inputs):
        q_neg, cache = critic.forward_cached(negative_inputs)
        n = len(q_neg)
        pen_grads, _ = backprop(critic, cache, 2.0 * penalty_weight * q_neg / n)
        grads = [(gw + pw, gb + pb) for (gw, gb), (pw, pb) in zip(grads, pen_grads)]
        loss += penalty_weight * float(np.mean(q_neg**2))
    return loss, grads


def weighted_bc_q_loss(
    policy: Mlp,
    critic: Mlp,
    obs: np.ndarray,
    goal: np.ndarray,
    actions: np.ndarray,
    weights: np.ndarray,
    alpha_prime: float,
) -> tuple[float, list]:
    """Weighted action regression minus a value-maximization term.

    Minimizes  mean_i[ w_i * ||pi(s_i, g_i) - a_i||^2 ]
             - alpha_prime * mean_i[ Q(s_i, pi(s_i, g_i), g_i) ],
    differentiating through the policy only; the critic is frozen and its
    influence flows exclusively through the action input.
    """
    weights = np.asarray(weights, dtype=float).reshape(-1, 1)
    n = len(weights)
    pi, cache = policy.forward_cached(policy_inputs(obs, goal))

    residual = pi - np.atleast_2d(actions)
    bc_loss = float(np.mean(weights * np.sum(residual**2, axis=-1, keepdims=True)))
    grad_pi = 2.0 * weights * residual / n

    q_loss = 0.0
    if alpha_prime != 0.0:
        x = critic_inputs(obs, pi, goal)
        q, q_cache = critic.forward_cached(x)
        q_loss = -alpha_prime * float(np.mean(q))
        _, grad_x = backprop(critic, q_cache, np.full_like(q, -alpha_prime / n))
        obs_width = np.atleast_2d(obs).shape[1]
        grad_pi = grad_pi + grad_x[:, obs_width : obs_width + pi.shape[1]]

    grads, _ = backprop(policy, cache, grad_pi)
    return bc_loss + q_loss, grads


def lagrangian_policy_loss(
    policy: Mlp,
    reward_critic: Mlp,
    cost_critic: Mlp,
    obs: np.ndarray,
    goal: np.ndarray,
    lam: float,
) -> tuple[float, list]:
    """Recovery objective: maximize Q_r(s, pi, g) - lam * Q_C(s, pi, g).

    Returned as a minimization loss (the negation); both critics are frozen
    and gradients reach the policy only through the action input.
    """
    pi, cache = policy.forward_cached(policy_inputs(obs, goal))
    n = len(pi)
    x = critic_inputs(obs, pi, goal)
    obs_width = np.atleast_2d(obs).shape[1]
    act_slice = slice(obs_width, obs_width + pi.shape[1])

    q_r, r_cache = reward_critic.forward_cached(x)
    _, grad_x_r = backprop(reward_critic, r_cache, np.full_like(q_r, -1.0 / n))

    q_c, c_cache = cost_critic.forward_cached(x)
    _, grad_x_c = backprop(cost_critic, c_cache, np.full_like(q_c, lam / n))

    grad_pi = grad_x_r[:, act_slice] + grad_x_c[:, act_slice]
    grads, _ = backprop(policy, cache, grad_pi)
    loss = -float(np.mean(q_r)) + lam * float(np.mean(q_c))
    return loss, grads
