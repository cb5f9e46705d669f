"""Training of the goal-conditioned policy and its Q-function on relabeled data.

The policy is deterministic; the log-likelihood term of the weighted
supervised objective is realized as a weighted squared action error (the two
agree up to constants for a fixed-variance Gaussian policy), and a normalized
value-maximization term pulls the policy above pure imitation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from . import agent as agent_mod
from .dataset import DEFAULT_GAMMA, DEFAULT_P_RELABEL, PackedDataset, TrajectoryDataset
from .env import ACTION_DIM, GOAL_DIM, OBS_DIM
from .losses import critic_inputs, policy_inputs, critic_td_loss, weighted_bc_q_loss
from .nets import Adam, Mlp, init_mlp, polyak_update, save_checkpoint

# Guard for the value-normalization denominator; below this the Q term is dropped.
MIN_Q_SCALE = 1e-6


@dataclass
class AdvantageBatch:
    """Per-sample advantages with the composed supervision weights."""

    advantages: np.ndarray
    weights: np.ndarray
    threshold: float  # the K-th percentile actually used


def td_targets(
    q_target: Mlp, policy: Mlp, batch: dict, gamma: float
) -> np.ndarray:
    """Bootstrap targets y = r + gamma * (1 - r) * Q_target(s', pi(s', g'), g').

    Success is treated as absorbing: a reward of 1 zeroes the bootstrap.
    """
    next_action = policy.forward(policy_inputs(batch["next_obs"], batch["goal"]))
    q_next = q_target.forward(critic_inputs(batch["next_obs"], next_action, batch["goal"]))[:, 0]
    r = batch["reward"]
    return r + gamma * (1.0 - r) * q_next


def q_value_update(
    q_fn: Mlp, q_target: Mlp, policy: Mlp, batch: dict, gamma: float, optimizer: Adam
) -> float:
    """One squared-TD-error step on the goal critic; returns the pre-step loss."""
    y = td_targets(q_target, policy, batch, gamma)
    inputs = critic_inputs(batch["obs"], batch["action"], batch["goal"])
    loss, grads = critic_td_loss(q_fn, inputs, y)
    if not np.isfinite(loss):
        raise FloatingPointError(f"non-finite goal-critic loss {loss}")
    optimizer.apply(q_fn, grads)
    return loss


def compute_advantages(q_fn: Mlp, policy: Mlp, batch: dict, gamma: float) -> np.ndarray:
    """A = r + gamma*(1-r)*Q(s', pi(s'), g') - Q(s, pi(s), g')."""
    target = td_targets(q_fn, policy, batch, gamma)
    own_action = policy.forward(policy_inputs(batch["obs"], batch["goal"]))
    baseline = q_fn.forward(critic_inputs(batch["obs"], own_action, batch["goal"]))[:, 0]
    return target - baseline


def wgcsl_weights(
    advantages: np.ndarray,
    horizon_gaps: np.ndarray,
    gamma: float,
    adv_clip: float,
    epsilon_weight: float,
    percentile: float,
) -> AdvantageBatch:
    """Composed weight: discount by hindsight gap, exponentiated advantage
    (clipped at ``adv_clip``), and a best-advantage indicator that keeps only
    epsilon_weight of the weight for samples at or below the K-th percentile."""
    threshold = float(np.percentile(advantages, percentile))
    exp_term = np.minimum(np.exp(advantages), adv_clip)
    indicator = np.where(advantages > threshold, 1.0, epsilon_weight)
    weights = gamma**horizon_gaps * exp_term * indicator
    return AdvantageBatch(advantages=advantages, weights=weights, threshold=threshold)


def normalized_alpha(q_fn: Mlp, batch: dict, alpha: float) -> float:
    """alpha divided by the mean |Q| over the batch's dataset actions, making
    the value term invariant to the critic's output scale."""
    q = q_fn.forward(critic_inputs(batch["obs"], batch["action"], batch["goal"]))[:, 0]
    scale = float(np.mean(np.abs(q)))
    if scale < MIN_Q_SCALE:
        return 0.0
    return alpha / scale


def policy_update(
    policy: Mlp, q_fn: Mlp, batch: dict, weights: np.ndarray, alpha: float, optimizer: Adam
) -> float:
    """One step on the weighted regression plus normalized Q term; returns the
    pre-step loss."""
    alpha_prime = normalized_alpha(q_fn, batch, alpha)
    loss, grads = weighted_bc_q_loss(
        policy, q_fn, batch["obs"], batch["goal"], batch["action"], weights, alpha_prime
    )
    if not np.isfinite(loss):
        raise FloatingPointError(f"non-finite policy loss {loss}")
    optimizer.apply(policy, grads)
    return loss


class GoalPolicyTrainer(BaseEstimator):
    """Fits a goal-conditioned actor-critic pair on an offline dataset.

    Parameters mirror the training configuration; fitted artifacts are exposed
    as ``policy_``, ``q_fn_``, ``q_target_`` and the per-epoch ``history_``.

    Parameters
    ----------
    gamma : discount used in targets, advantages and hindsight weights.
    adv_clip : cap on exp(advantage) inside the supervision weight.
    epsilon_weight : residual weight for samples at or below the percentile.
    percentile : advantage percentile (per minibatch) for the indicator factor.
    bc_q_alpha : strength of the value-maximization term before normalization.
    epochs, steps_per_epoch, batch_size : optimization schedule.
    p_relabel : probability of hindsight goal replacement per sample.
    hidden : hidden-layer widths shared by actor and critic.
    lr : Adam learning rate for both networks.
    polyak : target-network retention coefficient.
    eval_episodes : per-epoch evaluation rollouts (0 disables them).
    checkpoint_every : epoch stride for weight snapshots when fitting into a
        run directory (0 keeps only the final weights).
    seed : seeds initialization, minibatch order, relabeling and evaluation.
    """

    def __init__(
        self,
        gamma: float = DEFAULT_GAMMA,
        adv_clip: float = 10.0,
        epsilon_weight: float = 0.05,
        percentile: float = 80.0,
        bc_q_alpha: float = 2.5,
        epochs: int = 100,
        steps_per_epoch: int = 100,
        batch_size: int = 256,
        p_relabel: float = DEFAULT_P_RELABEL,
        hidden: tuple = (256, 256),
        lr: float = 1e-3,
        polyak: float = 0.995,
        eval_episodes: int = 20,
        checkpoint_every: int = 10,
        seed: int = 0,
    ):
        self.gamma = gamma
        self.adv_clip = adv_clip
        self.epsilon_weight = epsilon_weight
        self.percentile = percentile
        self.bc_q_alpha = bc_q_alpha
        self.epochs = epochs
        self.steps_per_epoch = steps_per_epoch
        self.batch_size = batch_size
        self.p_relabel = p_relabel
        self.hidden = hidden
        self.lr = lr
        self.polyak = polyak
        self.eval_episodes = eval_episodes
        self.checkpoint_every = checkpoint_every
        self.seed = seed

    def _init_networks(self, rng: np.random.Generator, action_max: float) -> None:
        hidden = tuple(self.hidden)
        self.policy_ = init_mlp(
            OBS_DIM + GOAL_DIM, hidden, ACTION_DIM, rng,
            output_activation="tanh", output_scale=action_max,
        )
        self.q_fn_ = init_mlp(OBS_DIM + ACTION_DIM + GOAL_DIM, hidden, 1, rng)
        self.q_target_ = self.q_fn_.clone()

    def fit(self, dataset: TrajectoryDataset, run_dir=None, metrics_callback=None):
        """Train on ``dataset``; returns self with fitted attributes set."""
        if len(dataset) == 0:
            raise ValueError("cannot fit on an empty dataset")
        rng = np.random.default_rng(self.seed)
        self._init_networks(rng, dataset.env_config.action_max)
        self.optimizer_policy_ = Adam(lr=self.lr)
        self.optimizer_q_ = Adam(lr=self.lr)
        self.history_ = []

        packed = PackedDataset(dataset)
        for epoch in range(1, self.epochs + 1):
            q_losses, policy_losses, mean_weights, thresholds = [], [], [], []
            for _ in range(self.steps_per_epoch):
                batch = packed.sample_batch(rng, self.batch_size, self.p_relabel)
                q_losses.append(
                    q_value_update(self.q_fn_, self.q_target_, self.policy_, batch,
                                   self.gamma, self.optimizer_q_)
                )
                advantages = compute_advantages(self.q_fn_, self.policy_, batch, self.gamma)
                adv_batch = wgcsl_weights(
                    advantages, batch["gap"], self.gamma,
                    self.adv_clip, self.epsilon_weight, self.percentile,
                )
                policy_losses.append(
                    policy_update(self.policy_, self.q_fn_, batch, adv_batch.weights,
                                  self.bc_q_alpha, self.optimizer_policy_)
                )
                mean_weights.append(float(np.mean(adv_batch.weights)))
                thresholds.append(adv_batch.threshold)
                polyak_update(self.q_target_, self.q_fn_, self.polyak)

            row = {
                "epoch": epoch,
                "q_loss": float(np.mean(q_losses)),
                "policy_loss": float(np.mean(policy_losses)),
                "mean_weight": float(np.mean(mean_weights)),
                "adv_threshold": float(np.mean(thresholds)),
            }
            row.update(self._epoch_eval(dataset.env_config, epoch))
            self.history_.append(row)
            if metrics_callback is not None:
                metrics_callback(row)
            if run_dir is not None and self.checkpoint_every and epoch % self.checkpoint_every == 0:
                self._save_networks(run_dir, suffix=f"_epoch{epoch:04d}")

        if run_dir is not None:
            self._save_networks(run_dir)
        return self

    def _epoch_eval(self, env_config, epoch: int) -> dict:
        if self.eval_episodes <= 0:
            return {"success_rate": float("nan"), "discounted_return": float("nan"),
                    "cost_return": float("nan")}
        probe = agent_mod.RbslAgent(goal_policy=self.policy_, switching_enabled=False)
        metrics, _ = agent_mod.evaluate(
            probe, env_config, self.eval_episodes,
            seed=int(np.random.SeedSequence((self.seed, epoch)).generate_state(1)[0]),
            gamma=self.gamma,
        )
        return {
            "success_rate": metrics.success_rate,
            "discounted_return": metrics.discounted_return,
            "cost_return": metrics.cost_return,
        }

    def _save_networks(self, run_dir, suffix: str = "") -> None:
        from pathlib import Path

        ckpt = Path(run_dir) / "checkpoints"
        save_checkpoint(ckpt / f"goal_policy{suffix}.json", self.policy_, self.optimizer_policy_)
        save_checkpoint(ckpt / f"goal_q{suffix}.json", self.q_fn_, self.optimizer_q_)

    def predict(self, obs: np.ndarray, goal: np.ndarray) -> np.ndarray:
        """Greedy actions of the fitted policy for (observation, goal) rows."""
        return self.policy_.forward(policy_inputs(obs, goal))
