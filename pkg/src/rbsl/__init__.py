"""Recovery-based supervised learning for constrained offline goal-conditioned RL."""

from .agent import ComparisonReport, EpisodeRecord, RbslAgent, RunMetrics, compare_runs, evaluate
from .collect import rollout_expert, rollout_random
from .dataset import (
    DEFAULT_GAMMA,
    RelabeledSample,
    Trajectory,
    TrajectoryDataset,
    filter_expert,
    filter_recovery,
    load,
    mix,
    relabel_sample,
    save,
    shape_costs,
)
from .env import ConfigurationError, EnvConfig, EnvState, Goal, KinematicEnv, ObstacleBox
from .goal_policy import GoalPolicyTrainer
from .recovery import PidLagrange, RecoveryPolicyTrainer

__version__ = "0.1.0"

__all__ = [
    "ComparisonReport",
    "ConfigurationError",
    "DEFAULT_GAMMA",
    "EnvConfig",
    "EnvState",
    "EpisodeRecord",
    "Goal",
    "GoalPolicyTrainer",
    "KinematicEnv",
    "ObstacleBox",
    "PidLagrange",
    "RbslAgent",
    "RecoveryPolicyTrainer",
    "RelabeledSample",
    "RunMetrics",
    "Trajectory",
    "TrajectoryDataset",
    "compare_runs",
    "evaluate",
    "filter_expert",
    "filter_recovery",
    "load",
    "mix",
    "relabel_sample",
    "rollout_expert",
    "rollout_random",
    "save",
    "shape_costs",
]
