"""The composed agent (goal policy + recovery policy + cost-critic switch)
and episode evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import DEFAULT_GAMMA
from .env import EnvConfig, KinematicEnv
from .losses import critic_inputs, policy_inputs
from .nets import Mlp

DECISION_GOAL = "goal"
DECISION_RECOVERY = "recovery"


@dataclass
class RbslAgent:
    """Per-step switch: act with the goal policy unless the cost critic predicts
    its proposed action exceeds the constraint limit, then defer to recovery."""

    goal_policy: Mlp
    recovery_policy: Mlp | None = None
    cost_critic: Mlp | None = None
    limit: float = 1.5
    switching_enabled: bool = True

    def __post_init__(self):
        if self.limit <= 0:
            raise ValueError("constraint limit must be > 0")
        if self.switching_enabled and (self.recovery_policy is None or self.cost_critic is None):
            self.switching_enabled = False

    def act(self, obs: np.ndarray, goal: np.ndarray) -> tuple[np.ndarray, str]:
        actions, decisions = self.act_batch(np.atleast_2d(obs), np.atleast_2d(goal))
        return actions[0], decisions[0]

    def act_batch(self, obs: np.ndarray, goal: np.ndarray) -> tuple[np.ndarray, list[str]]:
        """Vectorized act over a batch of (observation, goal) rows."""
        proposed = self.goal_policy.forward(policy_inputs(obs, goal))
        if not self.switching_enabled:
            return proposed, [DECISION_GOAL] * len(proposed)
        q_c = self.cost_critic.forward(critic_inputs(obs, proposed, goal))[:, 0]
        use_recovery = q_c > self.limit
        actions = proposed.copy()
        if use_recovery.any():
            recovery = self.recovery_policy.forward(
                policy_inputs(np.atleast_2d(obs)[use_recovery], np.atleast_2d(goal)[use_recovery])
            )
            actions[use_recovery] = recovery
        decisions = [DECISION_RECOVERY if flag else DECISION_GOAL for flag in use_recovery]
        return actions, decisions

    def predict(self, obs: np.ndarray, goal: np.ndarray) -> np.ndarray:
        """Actions only, for callers that do not need the switch decision."""
        return self.act_batch(np.atleast_2d(obs), np.atleast_2d(goal))[0]


@dataclass
class EpisodeRecord:
    """Everything needed to replay an episode's decisions after the fact."""

    goal: np.ndarray
    states: np.ndarray  # (T+1, obs_dim)
    actions: np.ndarray  # (T, action_dim)
    rewards: np.ndarray  # (T,)
    costs: np.ndarray  # (T,)
    decisions: list[str]
    final_distance: float

    def to_dict(self) -> dict:
        return {
            "goal": self.goal.tolist(),
            "states": self.states.tolist(),
            "actions": self.actions.tolist(),
            "rewards": self.rewards.tolist(),
            "costs": self.costs.tolist(),
            "decisions": list(self.decisions),
            "final_distance": self.final_distance,
        }


@dataclass
class RunMetrics:
    success_rate: float
    discounted_return: float
    cost_return: float
    cost_return_discounted: float
    recovery_activation_rate: float
    episodes: int
    seed: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def evaluate(
    agent: RbslAgent,
    config: EnvConfig,
    episodes: int,
    seed: int,
    gamma: float = DEFAULT_GAMMA,
) -> tuple[RunMetrics, list[EpisodeRecord]]:
    """Run fixed-horizon episodes in lockstep and aggregate the paper metrics.

    Success is measured at the final step; cost return is the undiscounted sum
    of raw per-step costs, averaged over episodes (the discounted variant is
    logged alongside).
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    env = KinematicEnv(config)
    episode_seeds = np.random.SeedSequence(seed).generate_state(episodes)

    states = []
    goals = []
    for ep_seed in episode_seeds:
        state, goal = env.reset(int(ep_seed))
        states.append(state)
        goals.append(goal)
    goal_targets = np.stack([g.target for g in goals])

    obs_log = [[env.observe(s)] for s in states]
    act_log = [[] for _ in range(episodes)]
    reward_log = np.zeros((episodes, config.horizon))
    cost_log = np.zeros((episodes, config.horizon))
    decision_log = [[] for _ in range(episodes)]

    for t in range(config.horizon):
        obs = np.stack([env.observe(s) for s in states])
        actions, decisions = agent.act_batch(obs, goal_targets)
        for i in range(episodes):
            result = env.step(states[i], actions[i], goals[i])
            states[i] = result.state
            reward_log[i, t] = result.reward
            cost_log[i, t] = result.cost
            obs_log[i].append(env.observe(result.state))
            act_log[i].append(np.clip(actions[i], -config.action_max, config.action_max))
            decision_log[i].append(decisions[i])

    records = []
    for i in range(episodes):
        final_distance = float(np.linalg.norm(env.phi(states[i]) - goals[i].target))
        records.append(
            EpisodeRecord(
                goal=goal_targets[i],
                states=np.asarray(obs_log[i]),
                actions=np.asarray(act_log[i]),
                rewards=reward_log[i].astype(int),
                costs=cost_log[i].astype(int),
                decisions=decision_log[i],
                final_distance=final_distance,
            )
        )

    discount = gamma ** np.arange(config.horizon)
    recovery_steps = sum(d == DECISION_RECOVERY for rec in records for d in rec.decisions)
    metrics = RunMetrics(
        success_rate=float(np.mean(reward_log[:, -1])),
        discounted_return=float(np.mean(reward_log @ discount)),
        cost_return=float(np.mean(cost_log.sum(axis=1))),
        cost_return_discounted=float(np.mean(cost_log @ discount)),
        recovery_activation_rate=recovery_steps / (episodes * config.horizon),
        episodes=episodes,
        seed=seed,
    )
    return metrics, records


@dataclass
class ComparisonReport:
    """Paired per-seed differences between two evaluation runs (a minus b)."""

    seeds: list[int]
    success_diffs: list[float]
    cost_diffs: list[float]
    mean_success_diff: float = field(init=False)
    std_success_diff: float = field(init=False)
    mean_cost_diff: float = field(init=False)
    std_cost_diff: float = field(init=False)

    def __post_init__(self):
        self.mean_success_diff = float(np.mean(self.success_diffs))
        self.std_success_diff = float(np.std(self.success_diffs))
        self.mean_cost_diff = float(np.mean(self.cost_diffs))
        self.std_cost_diff = float(np.std(self.cost_diffs))


def compare_runs(metrics_a: list[RunMetrics], metrics_b: list[RunMetrics]) -> ComparisonReport:
    """Pair two metric lists by seed and report success/cost differences."""
    seeds_a = [m.seed for m in metrics_a]
    seeds_b = [m.seed for m in metrics_b]
    if seeds_a != seeds_b:
        raise ValueError(f"seed mismatch: {seeds_a} vs {seeds_b}")
    if any(a.episodes != b.episodes for a, b in zip(metrics_a, metrics_b)):
        raise ValueError("episode-count mismatch between paired runs")
    return ComparisonReport(
        seeds=seeds_a,
        success_diffs=[a.success_rate - b.success_rate for a, b in zip(metrics_a, metrics_b)],
        cost_diffs=[a.cost_return - b.cost_return for a, b in zip(metrics_a, metrics_b)],
    )
