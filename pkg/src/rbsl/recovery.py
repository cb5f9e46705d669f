"""Training of the cost critic, the recovery critic with its out-of-distribution
action penalty, and the recovery policy under a Lagrangian cost objective.

All three are fitted on the filtered recovery dataset (successful trajectories
that touch the unsafe region), with costs shaped so the last violating step
before a safe successor counts as safe — rewarding actions that exit the
unsafe region.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .dataset import (
    DEFAULT_GAMMA,
    DEFAULT_P_RELABEL,
    PackedDataset,
    TrajectoryDataset,
    shape_dataset_costs,
)
from .env import ACTION_DIM, GOAL_DIM, OBS_DIM
from .goal_policy import td_targets
from .losses import (
    critic_inputs,
    critic_td_loss,
    critic_td_loss_with_penalty,
    lagrangian_policy_loss,
    policy_inputs,
)
from .nets import Adam, Mlp, init_mlp, polyak_update, save_checkpoint

# Candidates closer than this to the dataset action are not "unseen".
DEFAULT_EXCLUSION_RADIUS = 0.01  # 10% of the default action range
_NEGATIVE_RESAMPLE_ROUNDS = 10


@dataclass
class NegativeActionBatch:
    """Per-sample OOD action candidates with the softmax-drawn choice."""

    candidates: np.ndarray  # (N, m_neg, action_dim)
    chosen: np.ndarray  # (N, action_dim)
    probabilities: np.ndarray  # (N, m_neg); zero for excluded candidates


def sample_negative_actions(
    reward_critic: Mlp,
    obs: np.ndarray,
    goal: np.ndarray,
    dataset_actions: np.ndarray,
    action_max: float,
    m_neg: int,
    softmax_temp: float,
    exclusion_radius: float,
    rng: np.random.Generator,
) -> NegativeActionBatch:
    """Draw one unseen action per sample from softmax(Q_r / temp) over uniform
    box candidates, excluding a ball around the dataset action.

    Candidates inside the exclusion ball are redrawn a bounded number of times;
    a sample whose candidates all stay excluded falls back to the candidate
    farthest from its dataset action.
    """
    obs = np.atleast_2d(obs)
    goal = np.atleast_2d(goal)
    dataset_actions = np.atleast_2d(dataset_actions)
    n = len(obs)
    action_dim = dataset_actions.shape[-1]

    candidates = rng.uniform(-action_max, action_max, size=(n, m_neg, action_dim))
    distance = np.linalg.norm(candidates - dataset_actions[:, None, :], axis=-1)
    for _ in range(_NEGATIVE_RESAMPLE_ROUNDS):
        excluded = distance <= exclusion_radius
        if not excluded.any():
            break
        redraw = rng.uniform(-action_max, action_max, size=(int(excluded.sum()), action_dim))
        candidates[excluded] = redraw
        distance = np.linalg.norm(candidates - dataset_actions[:, None, :], axis=-1)
    valid = distance > exclusion_radius

    flat_inputs = critic_inputs(
        np.repeat(obs, m_neg, axis=0),
        candidates.reshape(n * m_neg, action_dim),
        np.repeat(goal, m_neg, axis=0),
    )
    logits = reward_critic.forward(flat_inputs)[:, 0].reshape(n, m_neg) / softmax_temp

    masked = np.where(valid, logits, -np.inf)
    any_valid = valid.any(axis=1)
    shifted = masked - masked.max(axis=1, keepdims=True, initial=-np.inf, where=valid)
    weights = np.where(valid, np.exp(np.where(valid, shifted, 0.0)), 0.0)
    totals = weights.sum(axis=1, keepdims=True)
    probabilities = np.divide(weights, totals, out=np.zeros_like(weights), where=totals > 0)

    draws = rng.random(n)
    cumulative = np.cumsum(probabilities, axis=1)
    picks = np.minimum((cumulative < draws[:, None]).sum(axis=1), m_neg - 1)
    # Degenerate fallback: every candidate sat inside the exclusion ball.
    picks[~any_valid] = np.argmax(distance[~any_valid], axis=1)
    chosen = candidates[np.arange(n), picks]
    return NegativeActionBatch(candidates=candidates, chosen=chosen, probabilities=probabilities)


def cost_td_targets(
    cost_target: Mlp, bootstrap_policy, batch: dict, gamma: float
) -> np.ndarray:
    """Targets y = c + (1-c) * gamma * Q_C_target(s', a_boot, g).

    The bootstrap action comes from the goal policy, matching the action the
    switching rule will interrogate; a violating step pins its target at 1,
    terminal steps regress on the bare cost, and the bootstrap value is
    clamped into the attainable range [0, 1/(1-gamma)].
    """
    c = batch["cost"]
    boot = bootstrap_policy.forward(policy_inputs(batch["next_obs"], batch["goal"]))
    q_next = cost_target.forward(critic_inputs(batch["next_obs"], boot, batch["goal"]))[:, 0]
    q_next = np.clip(q_next, 0.0, 1.0 / (1.0 - gamma))
    y = c + (1.0 - c) * gamma * q_next
    return np.where(batch["terminal"], c, y)


def cost_critic_update(
    cost_critic: Mlp,
    cost_target: Mlp,
    bootstrap_policy,
    batch: dict,
    gamma: float,
    optimizer: Adam,
) -> float:
    """One squared-error step of the cost critic toward :func:`cost_td_targets`."""
    y = cost_td_targets(cost_target, bootstrap_policy, batch, gamma)
    loss, grads = critic_td_loss(
        cost_critic, critic_inputs(batch["obs"], batch["action"], batch["goal"]), y
    )
    if not np.isfinite(loss):
        raise FloatingPointError(f"non-finite cost-critic loss {loss}")
    optimizer.apply(cost_critic, grads)
    return loss


def recovery_critic_update(
    reward_critic: Mlp,
    reward_target: Mlp,
    policy: Mlp,
    batch: dict,
    negatives: NegativeActionBatch,
    gamma: float,
    penalty_weight: float,
    optimizer: Adam,
) -> float:
    """TD step on the recovery reward critic plus the zero-target penalty that
    pushes Q_r down on unseen actions."""
    y = td_targets(reward_target, policy, batch, gamma)
    loss, grads = critic_td_loss_with_penalty(
        reward_critic,
        critic_inputs(batch["obs"], batch["action"], batch["goal"]),
        y,
        critic_inputs(batch["obs"], negatives.chosen, batch["goal"]),
        penalty_weight,
    )
    if not np.isfinite(loss):
        raise FloatingPointError(f"non-finite recovery-critic loss {loss}")
    optimizer.apply(reward_critic, grads)
    return loss


def recovery_policy_update(
    policy: Mlp,
    reward_critic: Mlp,
    cost_critic: Mlp,
    batch: dict,
    lam: float,
    optimizer: Adam,
) -> float:
    """Ascend Q_r - lam * Q_C at the policy's own actions; returns pre-step loss."""
    loss, grads = lagrangian_policy_loss(
        policy, reward_critic, cost_critic, batch["obs"], batch["goal"], lam
    )
    if not np.isfinite(loss):
        raise FloatingPointError(f"non-finite recovery-policy loss {loss}")
    optimizer.apply(policy, grads)
    return loss


class PidLagrange:
    """Incremental PID adjustment of the Lagrange multiplier.

    Each update adds k_p * (e - e_prev) + k_i * e + k_d * (de - de_prev) to the
    multiplier (the integral accumulates inside the multiplier itself) and
    projects the result onto [0, inf).
    """

    def __init__(self, k_p: float, k_i: float, k_d: float):
        self.k_p = k_p
        self.k_i = k_i
        self.k_d = k_d
        self._prev_error = 0.0
        self._prev_delta = 0.0

    def update(self, lam: float, mean_cost_q: float, limit: float) -> float:
        error = mean_cost_q - limit
        delta = error - self._prev_error
        second = delta - self._prev_delta
        self._prev_error = error
        self._prev_delta = delta
        return max(0.0, lam + self.k_p * delta + self.k_i * error + self.k_d * second)


class RecoveryPolicyTrainer(BaseEstimator):
    """Fits the recovery policy and its two critics on the recovery dataset.

    Fitted artifacts: ``policy_``, ``reward_critic_``, ``cost_critic_``,
    per-epoch ``history_``, the final multiplier ``lambda_`` and ``trained_``
    (False when the recovery dataset was empty and the networks are the
    documented no-op initialization).

    Parameters
    ----------
    gamma : discount for both critics.
    lam : Lagrange multiplier on the cost critic inside the policy objective.
    limit : constraint limit used by PID adaptation and the logged metrics.
    m_neg, softmax_temp, exclusion_radius : negative-action sampler controls.
    neg_penalty : weight of the zero-target penalty on unseen actions.
    pid_gains : optional (k_p, k_i, k_d); enables multiplier adaptation.
    epochs, steps_per_epoch, batch_size, p_relabel, hidden, lr, polyak, seed :
        as in the goal trainer.
    """

    def __init__(
        self,
        gamma: float = DEFAULT_GAMMA,
        lam: float = 10.0,
        limit: float = 1.5,
        m_neg: int = 10,
        softmax_temp: float = 1.0,
        exclusion_radius: float = DEFAULT_EXCLUSION_RADIUS,
        neg_penalty: float = 0.5,
        pid_gains: tuple | None = None,
        epochs: int = 50,
        steps_per_epoch: int = 100,
        batch_size: int = 256,
        p_relabel: float = DEFAULT_P_RELABEL,
        hidden: tuple = (256, 256),
        lr: float = 1e-3,
        polyak: float = 0.995,
        checkpoint_every: int = 10,
        seed: int = 0,
    ):
        self.gamma = gamma
        self.lam = lam
        self.limit = limit
        self.m_neg = m_neg
        self.softmax_temp = softmax_temp
        self.exclusion_radius = exclusion_radius
        self.neg_penalty = neg_penalty
        self.pid_gains = pid_gains
        self.epochs = epochs
        self.steps_per_epoch = steps_per_epoch
        self.batch_size = batch_size
        self.p_relabel = p_relabel
        self.hidden = hidden
        self.lr = lr
        self.polyak = polyak
        self.checkpoint_every = checkpoint_every
        self.seed = seed

    def _init_networks(self, rng: np.random.Generator, action_max: float) -> None:
        hidden = tuple(self.hidden)
        self.policy_ = init_mlp(
            OBS_DIM + GOAL_DIM, hidden, ACTION_DIM, rng,
            output_activation="tanh", output_scale=action_max,
        )
        self.reward_critic_ = init_mlp(OBS_DIM + ACTION_DIM + GOAL_DIM, hidden, 1, rng)
        self.cost_critic_ = init_mlp(OBS_DIM + ACTION_DIM + GOAL_DIM, hidden, 1, rng)
        self.reward_target_ = self.reward_critic_.clone()
        self.cost_target_ = self.cost_critic_.clone()

    def fit(self, dataset: TrajectoryDataset, goal_policy: Mlp, run_dir=None,
            metrics_callback=None):
        """Train on the (cost-filtered) recovery dataset.

        An empty dataset yields a warning and untrained (freshly initialized)
        networks with ``trained_ = False`` so the caller can disable switching.
        """
        rng = np.random.default_rng(self.seed)
        action_max = dataset.env_config.action_max
        self._init_networks(rng, action_max)
        self.optimizer_policy_ = Adam(lr=self.lr)
        self.optimizer_reward_ = Adam(lr=self.lr)
        self.optimizer_cost_ = Adam(lr=self.lr)
        self.lambda_ = float(self.lam)
        self.history_ = []
        self.trained_ = len(dataset) > 0

        if not self.trained_:
            warnings.warn("empty recovery dataset: returning a no-op recovery policy")
            return self

        pid = PidLagrange(*self.pid_gains) if self.pid_gains else None
        packed = PackedDataset(shape_dataset_costs(dataset))

        for epoch in range(1, self.epochs + 1):
            qc_losses, qr_losses, pi_losses, mean_qcs, above = [], [], [], [], []
            for _ in range(self.steps_per_epoch):
                batch = packed.sample_batch(rng, self.batch_size, self.p_relabel)
                negatives = sample_negative_actions(
                    self.reward_critic_, batch["obs"], batch["goal"], batch["action"],
                    action_max, self.m_neg, self.softmax_temp, self.exclusion_radius, rng,
                )
                qr_losses.append(
                    recovery_critic_update(
                        self.reward_critic_, self.reward_target_, self.policy_, batch,
                        negatives, self.gamma, self.neg_penalty, self.optimizer_reward_,
                    )
                )
                qc_losses.append(
                    cost_critic_update(
                        self.cost_critic_, self.cost_target_, goal_policy, batch,
                        self.gamma, self.optimizer_cost_,
                    )
                )
                pi_losses.append(
                    recovery_policy_update(
                        self.policy_, self.reward_critic_, self.cost_critic_, batch,
                        self.lambda_, self.optimizer_policy_,
                    )
                )
                own_action = self.policy_.forward(policy_inputs(batch["obs"], batch["goal"]))
                q_c = self.cost_critic_.forward(
                    critic_inputs(batch["obs"], own_action, batch["goal"])
                )[:, 0]
                mean_qcs.append(float(np.mean(q_c)))
                above.append(float(np.mean(q_c > self.limit)))
                if pid is not None:
                    self.lambda_ = pid.update(self.lambda_, mean_qcs[-1], self.limit)
                polyak_update(self.reward_target_, self.reward_critic_, self.polyak)
                polyak_update(self.cost_target_, self.cost_critic_, self.polyak)

            row = {
                "epoch": epoch,
                "qc_loss": float(np.mean(qc_losses)),
                "qr_loss": float(np.mean(qr_losses)),
                "recovery_policy_loss": float(np.mean(pi_losses)),
                "lambda": self.lambda_,
                "mean_qc": float(np.mean(mean_qcs)),
                "fraction_batch_above_l": float(np.mean(above)),
            }
            self.history_.append(row)
            if metrics_callback is not None:
                metrics_callback(row)
            if run_dir is not None and self.checkpoint_every and epoch % self.checkpoint_every == 0:
                self._save_networks(run_dir, suffix=f"_epoch{epoch:04d}")

        if run_dir is not None:
            self._save_networks(run_dir)
        return self

    def _save_networks(self, run_dir, suffix: str = "") -> None:
        from pathlib import Path

        ckpt = Path(run_dir) / "checkpoints"
        save_checkpoint(ckpt / f"recovery_policy{suffix}.json", self.policy_, self.optimizer_policy_)
        save_checkpoint(ckpt / f"recovery_q{suffix}.json", self.reward_critic_, self.optimizer_reward_)
        save_checkpoint(ckpt / f"cost_q{suffix}.json", self.cost_critic_, self.optimizer_cost_)

    def predict(self, obs: np.ndarray, goal: np.ndarray) -> np.ndarray:
        """Recovery actions for (observation, goal) rows."""
        return self.policy_.forward(policy_inputs(obs, goal))
