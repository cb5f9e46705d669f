"""Deterministic kinematic 2D goal-reaching environments with a box obstacle.

Two variants share one observation layout:

* ``reach2d`` — the agent itself must reach the goal position.
* ``push2d``  — the agent pushes a point object to the goal position.

All operations are pure functions of explicit state: ``reset`` returns a fresh
(state, goal) pair and ``step`` maps (state, action, goal) to the next state
without touching any hidden mutable state, so arbitrarily many rollouts can
run in parallel.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from .geometry import point_in_box, segment_intersects_box

VARIANTS = ("reach2d", "push2d")

# Observation layout, fixed across variants:
#   [agent_pos (2), object_pos (2), object_pos - agent_pos (2),
#    obstacle.center (2), obstacle.half_extents (2)]
OBS_DIM = 10
ACTION_DIM = 2
GOAL_DIM = 2

# Obstacle sampling ranges and the minimum start-goal separation; chosen so an
# unobstructed episode needs roughly 15-25 steps at the default action_max.
_CENTER_LO, _CENTER_HI = 0.25, 0.75
_HALF_EXTENT_LO, _HALF_EXTENT_HI = 0.06, 0.12
_MIN_SEPARATION = 0.6
_MAX_RESET_ATTEMPTS = 1000


class ConfigurationError(ValueError):
    """Raised when an environment configuration cannot produce valid episodes."""


@dataclass(frozen=True)
class ObstacleBox:
    """Axis-aligned hazard region: unsafe means inside the box inflated by ``inflation``."""

    center: np.ndarray
    half_extents: np.ndarray
    inflation: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        object.__setattr__(self, "half_extents", np.asarray(self.half_extents, dtype=float))
        if not np.all(self.half_extents > 0):
            raise ConfigurationError("obstacle half_extents must be strictly positive")
        if self.inflation < 0:
            raise ConfigurationError("obstacle inflation must be >= 0")

    @property
    def inflated_half_extents(self) -> np.ndarray:
        return self.half_extents + self.inflation

    def contains_inflated(self, point: np.ndarray) -> bool:
        """True iff ``point`` lies in the closed inflated box (the unsafe set)."""
        return point_in_box(point, self.center, self.inflated_half_extents)

    def blocks_segment(self, p0: np.ndarray, p1: np.ndarray) -> bool:
        return segment_intersects_box(p0, p1, self.center, self.inflated_half_extents)


@dataclass(frozen=True)
class Goal:
    """Target position with the success tolerance delta (Euclidean)."""

    target: np.ndarray
    tolerance: float

    def __post_init__(self):
        object.__setattr__(self, "target", np.asarray(self.target, dtype=float))
        if self.tolerance <= 0:
            raise ConfigurationError("goal tolerance must be > 0")

    def achieved(self, position: np.ndarray) -> bool:
        return float(np.linalg.norm(position - self.target)) <= self.tolerance


@dataclass(frozen=True)
class EnvState:
    """One instant of an episode; ``object_pos == agent_pos`` in the reach variant."""

    agent_pos: np.ndarray
    object_pos: np.ndarray
    obstacle: ObstacleBox
    step_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "agent_pos", np.asarray(self.agent_pos, dtype=float))
        object.__setattr__(self, "object_pos", np.asarray(self.object_pos, dtype=float))


@dataclass(frozen=True)
class EnvConfig:
    """Desk-scale environment description; serializable as JSON with these field names."""

    variant: str = "reach2d"
    horizon: int = 50
    action_max: float = 0.05
    goal_tolerance: float = 0.05
    inflation: float = 0.05
    workspace: tuple = ((0.0, 0.0), (1.0, 1.0))
    seed: int = 0
    p_block: float = 0.7
    contact_radius: float = 0.04

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.horizon < 1:
            raise ConfigurationError("horizon must be >= 1")
        if self.action_max <= 0:
            raise ConfigurationError("action_max must be > 0")
        if self.goal_tolerance <= 0 or self.inflation <= 0:
            raise ConfigurationError("goal_tolerance and inflation must be > 0")
        if not 0.0 <= self.p_block <= 1.0:
            raise ConfigurationError("p_block must lie in [0, 1]")
        object.__setattr__(
            self, "workspace", tuple(tuple(float(v) for v in bound) for bound in self.workspace)
        )

    @property
    def workspace_lo(self) -> np.ndarray:
        return np.asarray(self.workspace[0], dtype=float)

    @property
    def workspace_hi(self) -> np.ndarray:
        return np.asarray(self.workspace[1], dtype=float)

    def to_dict(self) -> dict[str, Any]:
        return {
            "variant": self.variant,
            "horizon": self.horizon,
            "action_max": self.action_max,
            "goal_tolerance": self.goal_tolerance,
            "inflation": self.inflation,
            "workspace": [list(self.workspace[0]), list(self.workspace[1])],
            "seed": self.seed,
            "p_block": self.p_block,
            "contact_radius": self.contact_radius,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "EnvConfig":
        known = {f: data[f] for f in cls.__dataclass_fields__ if f in data}
        if "workspace" in known:
            known["workspace"] = tuple(tuple(v) for v in known["workspace"])
        return cls(**known)


@dataclass(frozen=True)
class StepResult:
    state: EnvState
    reward: int
    cost: int
    done: bool


def observe(state: EnvState) -> np.ndarray:
    """Flatten a state into the fixed 10-dim observation vector."""
    return np.concatenate(
        [
            state.agent_pos,
            state.object_pos,
            state.object_pos - state.agent_pos,
            state.obstacle.center,
            state.obstacle.half_extents,
        ]
    )


def achieved_from_observation(obs: np.ndarray) -> np.ndarray:
    """The goal-space position encoded in an observation (object slot; equals
    the agent slot in the reach variant)."""
    return np.asarray(obs)[..., 2:4]


def obstacle_from_observation(obs: np.ndarray, inflation: float) -> ObstacleBox:
    obs = np.asarray(obs)
    return ObstacleBox(center=obs[6:8], half_extents=obs[8:10], inflation=inflation)


class KinematicEnv:
    """Stateless environment engine bound to one :class:`EnvConfig`.

    Episode state lives entirely in the :class:`EnvState` values passed in and
    out; the engine itself only holds the immutable configuration.
    """

    def __init__(self, config: EnvConfig):
        self.config = config

    # -- episode initialization -------------------------------------------------

    def reset(self, seed: int) -> tuple[EnvState, Goal]:
        """Sample a start state, goal, and obstacle.

        The obstacle blocks the straight start-to-goal segment with probability
        ``p_block`` (decided first, then matched by rejection sampling); the
        start and goal themselves always lie outside the inflated box.
        """
        cfg = self.config
        rng = np.random.default_rng(seed)
        want_block = bool(rng.random() < cfg.p_block)

        for _ in range(_MAX_RESET_ATTEMPTS):
            center = rng.uniform(_CENTER_LO, _CENTER_HI, size=2)
            half_extents = rng.uniform(_HALF_EXTENT_LO, _HALF_EXTENT_HI, size=2)
            obstacle = ObstacleBox(center=center, half_extents=half_extents, inflation=cfg.inflation)

            start = rng.uniform(cfg.workspace_lo, cfg.workspace_hi)
            target = rng.uniform(cfg.workspace_lo, cfg.workspace_hi)
            if obstacle.contains_inflated(start) or obstacle.contains_inflated(target):
                continue
            if float(np.linalg.norm(start - target)) < _MIN_SEPARATION:
                continue
            if obstacle.blocks_segment(start, target) != want_block:
                continue

            if cfg.variant == "push2d":
                agent = self._place_agent_near_object(rng, start, obstacle)
                if agent is None:
                    continue
            else:
                agent = start

            state = EnvState(agent_pos=agent, object_pos=start, obstacle=obstacle, step_index=0)
            return state, Goal(target=target, tolerance=cfg.goal_tolerance)

        raise ConfigurationError(
            f"could not sample a valid episode in {_MAX_RESET_ATTEMPTS} attempts; "
            "workspace too crowded for the requested p_block"
        )

    def _place_agent_near_object(self, rng, object_pos, obstacle):
        """Put the agent a little away from the object, outside the unsafe box."""
        cfg = self.config
        for _ in range(20):
            angle = rng.uniform(0.0, 2.0 * np.pi)
            offset = 3.0 * cfg.contact_radius * np.array([np.cos(angle), np.sin(angle)])
            agent = object_pos + offset
            inside_ws = np.all(agent >= cfg.workspace_lo) and np.all(agent <= cfg.workspace_hi)
            if inside_ws and not obstacle.contains_inflated(agent):
                return agent
        return None

    # -- dynamics ---------------------------------------------------------------

    def step(self, state: EnvState, action: np.ndarray, goal: Goal) -> StepResult:
        """Advance one step; actions are clipped, never rejected."""
        cfg = self.config
        action = np.clip(np.asarray(action, dtype=float), -cfg.action_max, cfg.action_max)
        agent = np.clip(state.agent_pos + action, cfg.workspace_lo, cfg.workspace_hi)

        if cfg.variant == "push2d":
            obj = self._push_object(agent, state.object_pos, action)
        else:
            obj = agent

        next_state = EnvState(
            agent_pos=agent,
            object_pos=obj,
            obstacle=state.obstacle,
            step_index=state.step_index + 1,
        )
        reward = int(goal.achieved(self.phi(next_state)))
        cost = self.cost_of(next_state)
        done = next_state.step_index >= cfg.horizon
        return StepResult(state=next_state, reward=reward, cost=cost, done=done)

    def _push_object(self, agent: np.ndarray, obj: np.ndarray, action: np.ndarray) -> np.ndarray:
        cfg = self.config
        delta = obj - agent
        dist = float(np.linalg.norm(delta))
        if dist > cfg.contact_radius:
            return obj
        if dist > 1e-9:
            direction = delta / dist
        else:
            # Agent exactly on the object: push along the motion direction.
            speed = float(np.linalg.norm(action))
            if speed < 1e-12:
                return obj
            direction = action / speed
        overlap = cfg.contact_radius - dist
        return np.clip(obj + overlap * direction, cfg.workspace_lo, cfg.workspace_hi)

    # -- observations and signals -----------------------------------------------

    def phi(self, state: EnvState) -> np.ndarray:
        """State-to-goal mapping: the entity whose position the goal constrains."""
        return state.object_pos if self.config.variant == "push2d" else state.agent_pos

    def cost_of(self, state: EnvState) -> int:
        """1 iff the goal entity sits inside the closed inflated obstacle box."""
        return int(state.obstacle.contains_inflated(self.phi(state)))

    def observe(self, state: EnvState) -> np.ndarray:
        return observe(state)
