"""Offline trajectory datasets: containers, JSONL persistence, and the
relabel / filter / cost-shaping transforms applied before training.

A dataset file is JSON Lines: the first line is a header object
``{"format_version": 1, "env_config": {...}}`` and every following line is one
trajectory object with keys ``provenance, goal, tolerance, obstacle, states,
actions, rewards, costs``.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

from .env import EnvConfig, ObstacleBox, achieved_from_observation

FORMAT_VERSION = 1

# Discount shared by return/cost-return accounting and every trainer; matches
# the usual choice for 50-step sparse-reward episodes.
DEFAULT_GAMMA = 0.98

# Fraction of samples whose goal is replaced by a future achieved state.
DEFAULT_P_RELABEL = 0.8

PROVENANCES = ("expert", "random")


class DatasetFormatError(ValueError):
    """Raised when a dataset file violates the JSONL schema or an invariant."""


class Transition(NamedTuple):
    state: np.ndarray
    action: np.ndarray
    reward: int
    cost: int
    next_state: np.ndarray


class RelabeledSample(NamedTuple):
    """One training sample after hindsight relabeling."""

    state: np.ndarray
    action: np.ndarray
    relabeled_goal: np.ndarray
    relabeled_reward: int
    next_state: np.ndarray
    horizon_gap: int
    cost: int


@dataclass(frozen=True)
class Trajectory:
    """One fixed-horizon episode; goal and obstacle are constant within it."""

    states: np.ndarray  # (T+1, obs_dim)
    actions: np.ndarray  # (T, action_dim)
    rewards: np.ndarray  # (T,) in {0, 1}
    costs: np.ndarray  # (T,) in {0, 1}
    goal: np.ndarray  # (2,)
    tolerance: float
    obstacle: ObstacleBox
    provenance: str

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise DatasetFormatError(f"unknown provenance {self.provenance!r}")
        if len(self.states) != len(self.actions) + 1:
            raise DatasetFormatError("states must be one longer than actions")
        if not (len(self.actions) == len(self.rewards) == len(self.costs)):
            raise DatasetFormatError("actions, rewards and costs must share a length")

    @property
    def horizon(self) -> int:
        return len(self.actions)

    def transitions(self) -> Iterator[Transition]:
        for t in range(self.horizon):
            yield Transition(
                state=self.states[t],
                action=self.actions[t],
                reward=int(self.rewards[t]),
                cost=int(self.costs[t]),
                next_state=self.states[t + 1],
            )

    def discounted_return(self, gamma: float = DEFAULT_GAMMA) -> float:
        return float(np.sum(gamma ** np.arange(self.horizon) * self.rewards))

    def discounted_cost_return(self, gamma: float = DEFAULT_GAMMA) -> float:
        return float(np.sum(gamma ** np.arange(self.horizon) * self.costs))

    def ends_safe(self) -> bool:
        """True iff the final achieved position lies outside the unsafe region."""
        final = achieved_from_observation(self.states[-1])
        return not self.obstacle.contains_inflated(final)


@dataclass
class DatasetStats:
    trajectories: int
    transitions: int
    mean_return: float
    mean_cost_return: float
    expert_fraction: float
    success_rate: float  # fraction of trajectories whose final step is rewarded

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class TrajectoryDataset:
    env_config: EnvConfig
    trajectories: list[Trajectory]

    def __len__(self) -> int:
        return len(self.trajectories)

    def __iter__(self) -> Iterator[Trajectory]:
        return iter(self.trajectories)

    def stats(self, gamma: float = DEFAULT_GAMMA) -> DatasetStats:
        n = len(self.trajectories)
        if n == 0:
            return DatasetStats(0, 0, 0.0, 0.0, 0.0, 0.0)
        returns = [t.discounted_return(gamma) for t in self.trajectories]
        cost_returns = [t.discounted_cost_return(gamma) for t in self.trajectories]
        expert = sum(t.provenance == "expert" for t in self.trajectories)
        return DatasetStats(
            trajectories=n,
            transitions=sum(t.horizon for t in self.trajectories),
            mean_return=float(np.mean(returns)),
            mean_cost_return=float(np.mean(cost_returns)),
            expert_fraction=expert / n,
            success_rate=float(np.mean([t.rewards[-1] for t in self.trajectories])),
        )


# -- persistence ------------------------------------------------------------------


def save(dataset: TrajectoryDataset, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        header = {"format_version": FORMAT_VERSION, "env_config": dataset.env_config.to_dict()}
        fh.write(json.dumps(header, separators=(",", ":")) + "\n")
        for traj in dataset.trajectories:
            record = {
                "provenance": traj.provenance,
                "goal": traj.goal.tolist(),
                "tolerance": traj.tolerance,
                "obstacle": {
                    "center": traj.obstacle.center.tolist(),
                    "half_extents": traj.obstacle.half_extents.tolist(),
                    "inflation": traj.obstacle.inflation,
                },
                "states": traj.states.tolist(),
                "actions": traj.actions.tolist(),
                "rewards": traj.rewards.tolist(),
                "costs": traj.costs.tolist(),
            }
            fh.write(json.dumps(record, separators=(",", ":")) + "\n")


def _require(condition: bool, line: int, field: str, message: str) -> None:
    if not condition:
        raise DatasetFormatError(f"line {line}, field {field!r}: {message}")


def load(path: str | Path) -> TrajectoryDataset:
    path = Path(path)
    with path.open() as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DatasetFormatError("line 1, field 'format_version': empty file")

    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"line 1, field 'header': invalid JSON ({exc})") from exc
    _require(header.get("format_version") == FORMAT_VERSION, 1, "format_version",
             f"expected {FORMAT_VERSION}")
    _require("env_config" in header, 1, "env_config", "missing")
    env_config = EnvConfig.from_dict(header["env_config"])

    trajectories = []
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"line {lineno}, field 'trajectory': invalid JSON ({exc})") from exc
        for field_name in ("provenance", "goal", "tolerance", "obstacle", "states",
                           "actions", "rewards", "costs"):
            _require(field_name in rec, lineno, field_name, "missing")
        rewards = np.asarray(rec["rewards"])
        costs = np.asarray(rec["costs"])
        _require(bool(np.isin(rewards, (0, 1)).all()), lineno, "rewards", "values must be 0 or 1")
        _require(bool(np.isin(costs, (0, 1)).all()), lineno, "costs", "values must be 0 or 1")
        states = np.asarray(rec["states"], dtype=float)
        actions = np.asarray(rec["actions"], dtype=float)
        _require(states.ndim == 2, lineno, "states", "must be a 2D array")
        _require(actions.ndim == 2, lineno, "actions", "must be a 2D array")
        _require(len(states) == len(actions) + 1, lineno, "states",
                 "must hold one more row than actions")
        obstacle = rec["obstacle"]
        trajectories.append(
            Trajectory(
                states=states,
                actions=actions,
                rewards=rewards.astype(int),
                costs=costs.astype(int),
                goal=np.asarray(rec["goal"], dtype=float),
                tolerance=float(rec["tolerance"]),
                obstacle=ObstacleBox(
                    center=obstacle["center"],
                    half_extents=obstacle["half_extents"],
                    inflation=obstacle["inflation"],
                ),
                provenance=rec["provenance"],
            )
        )
    return TrajectoryDataset(env_config=env_config, trajectories=trajectories)


# -- mixing -----------------------------------------------------------------------


def mix(
    expert: TrajectoryDataset,
    random: TrajectoryDataset,
    expert_fraction: float,
    seed: int,
    total: int | None = None,
) -> TrajectoryDataset:
    """Compose a dataset with ``expert_fraction`` of its trajectories from the
    expert pool (rounded down) and the rest from the random pool.

    ``total`` defaults to the largest size the two pools can supply at the
    requested fraction. Trajectories are kept intact and shuffled by ``seed``.
    """
    if not 0.0 <= expert_fraction <= 1.0:
        raise ValueError("expert_fraction must lie in [0, 1]")
    if total is None:
        candidates = []
        if expert_fraction > 0:
            candidates.append(int(len(expert) / expert_fraction))
        if expert_fraction < 1:
            candidates.append(int(len(random) / (1.0 - expert_fraction)))
        total = min(candidates)
    n_expert = int(expert_fraction * total)
    n_random = total - n_expert
    if n_expert > len(expert) or n_random > len(random):
        raise ValueError(
            f"cannot draw {n_expert} expert + {n_random} random trajectories from pools "
            f"of {len(expert)} and {len(random)}"
        )

    rng = np.random.default_rng(seed)
    picked = [expert.trajectories[i] for i in rng.permutation(len(expert))[:n_expert]]
    picked += [random.trajectories[i] for i in rng.permutation(len(random))[:n_random]]
    order = rng.permutation(len(picked))
    return TrajectoryDataset(
        env_config=expert.env_config,
        trajectories=[picked[i] for i in order],
    )


# -- hindsight relabeling -----------------------------------------------------------


def relabel_sample(
    traj: Trajectory,
    t: int,
    rng: np.random.Generator,
    p_relabel: float = DEFAULT_P_RELABEL,
) -> RelabeledSample:
    """Hindsight-relabel the sample at step ``t``.

    If the trajectory ends outside the unsafe region, the goal is replaced
    (with probability ``p_relabel``) by the position achieved at a uniformly
    drawn future step t' >= t, and the reward is recomputed on the next state
    under the new goal. Trajectories that end inside the unsafe region keep
    their original goal and reward. The obstacle stays encoded in the state
    either way.
    """
    if not 0 <= t < traj.horizon:
        raise IndexError(f"step {t} outside [0, {traj.horizon})")
    state = traj.states[t]
    action = traj.actions[t]
    next_state = traj.states[t + 1]
    cost = int(traj.costs[t])

    if traj.ends_safe() and rng.random() < p_relabel:
        t_prime = int(rng.integers(t, traj.horizon + 1))
        goal = achieved_from_observation(traj.states[t_prime]).copy()
        achieved_next = achieved_from_observation(next_state)
        reward = int(np.linalg.norm(achieved_next - goal) <= traj.tolerance)
        gap = t_prime - t
    else:
        goal = traj.goal.copy()
        reward = int(traj.rewards[t])
        gap = 0

    return RelabeledSample(
        state=state,
        action=action,
        relabeled_goal=goal,
        relabeled_reward=reward,
        next_state=next_state,
        horizon_gap=gap,
        cost=cost,
    )


class PackedDataset:
    """Stacked-array view of a dataset for fast minibatch assembly.

    Requires every trajectory to share one horizon (the environments are
    fixed-horizon, so this always holds for generated data).
    """

    def __init__(self, dataset: TrajectoryDataset):
        if len(dataset) == 0:
            raise ValueError("cannot pack an empty dataset")
        horizons = {t.horizon for t in dataset.trajectories}
        if len(horizons) != 1:
            raise DatasetFormatError(f"mixed horizons in dataset: {sorted(horizons)}")
        self.horizon = horizons.pop()
        self.tolerance = dataset.trajectories[0].tolerance
        self.states = np.stack([t.states for t in dataset.trajectories])
        self.actions = np.stack([t.actions for t in dataset.trajectories])
        self.rewards = np.stack([t.rewards for t in dataset.trajectories]).astype(float)
        self.costs = np.stack([t.costs for t in dataset.trajectories]).astype(float)
        self.goals = np.stack([t.goal for t in dataset.trajectories])
        self.ends_safe = np.array([t.ends_safe() for t in dataset.trajectories])

    def __len__(self) -> int:
        return self.states.shape[0]

    def sample_batch(
        self,
        rng: np.random.Generator,
        batch_size: int,
        p_relabel: float = DEFAULT_P_RELABEL,
    ) -> dict[str, np.ndarray]:
        """Draw (trajectory, step) pairs uniformly and relabel them in bulk.

        Semantics per sample match :func:`relabel_sample`; the vectorized path
        only changes the order in which random draws are consumed.
        """
        n = len(self)
        traj_idx = rng.integers(0, n, size=batch_size)
        t = rng.integers(0, self.horizon, size=batch_size)

        relabel = self.ends_safe[traj_idx] & (rng.random(batch_size) < p_relabel)
        # Inclusive upper bound: t' can be the final state index.
        t_prime = rng.integers(t, self.horizon + 1)

        goals = self.goals[traj_idx].copy()
        achieved = achieved_from_observation(self.states[traj_idx[relabel], t_prime[relabel]])
        goals[relabel] = achieved

        next_obs = self.states[traj_idx, t + 1]
        rewards = self.rewards[traj_idx, t].copy()
        dist = np.linalg.norm(achieved_from_observation(next_obs[relabel]) - achieved, axis=-1)
        rewards[relabel] = (dist <= self.tolerance).astype(float)

        gaps = np.zeros(batch_size, dtype=int)
        gaps[relabel] = (t_prime - t)[relabel]

        return {
            "obs": self.states[traj_idx, t],
            "action": self.actions[traj_idx, t],
            "reward": rewards,
            "next_obs": next_obs,
            "goal": goals,
            "gap": gaps,
            "cost": self.costs[traj_idx, t],
            "terminal": (t == self.horizon - 1),
        }


# -- filtering and cost shaping -----------------------------------------------------


def filter_expert(dataset: TrajectoryDataset, gamma: float = DEFAULT_GAMMA) -> TrajectoryDataset:
    """Keep exactly the trajectories whose discounted return is positive."""
    kept = [t for t in dataset.trajectories if t.discounted_return(gamma) > 0]
    if not kept:
        warnings.warn("expert filter produced an empty dataset (no successful trajectories)")
    return TrajectoryDataset(env_config=dataset.env_config, trajectories=kept)


def filter_recovery(dataset: TrajectoryDataset, gamma: float = DEFAULT_GAMMA) -> TrajectoryDataset:
    """Keep exactly the trajectories whose discounted cost return is positive."""
    kept = [t for t in dataset.trajectories if t.discounted_cost_return(gamma) > 0]
    if not kept:
        warnings.warn("recovery filter produced an empty dataset (no constraint-touching successes)")
    return TrajectoryDataset(env_config=dataset.env_config, trajectories=kept)


def shape_costs(traj: Trajectory) -> Trajectory:
    """Zero the cost of each violating step whose successor step is safe.

    The final step has no successor and is left unshaped. Returns a new
    trajectory; the input (with the raw costs used for metrics) is untouched.
    """
    shaped = traj.costs.copy()
    exits = (traj.costs[:-1] == 1) & (traj.costs[1:] == 0)
    shaped[:-1][exits] = 0
    return replace(traj, costs=shaped)


def shape_dataset_costs(dataset: TrajectoryDataset) -> TrajectoryDataset:
    return TrajectoryDataset(
        env_config=dataset.env_config,
        trajectories=[shape_costs(t) for t in dataset.trajectories],
    )
