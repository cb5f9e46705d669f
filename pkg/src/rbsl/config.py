"""Run configuration, run-directory manifests, and metrics CSV output.

A run configuration is one JSON document; every field has a code-side default
and the fully resolved values are echoed into the run manifest, so a run
directory never depends on implicit defaults.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

from .env import EnvConfig

ARTIFACT_NAME = "rbsl"


class RunConfigError(ValueError):
    pass


def _goal_defaults() -> dict:
    from .goal_policy import GoalPolicyTrainer

    return GoalPolicyTrainer().get_params()


def _recovery_defaults() -> dict:
    from .recovery import RecoveryPolicyTrainer

    return RecoveryPolicyTrainer().get_params()


@dataclass
class RunConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    goal: dict = field(default_factory=_goal_defaults)
    recovery: dict = field(default_factory=_recovery_defaults)
    limit: float = 1.5  # switching threshold of the composed agent
    # Below this many recovery trajectories, skip recovery training and
    # disable switching (the critics cannot be trusted on starved data).
    # The default of 1 keeps the plain rule: only an empty set disables.
    min_recovery_trajectories: int = 1
    eval_episodes: int = 100
    eval_seeds: tuple = (0,)
    seed: int = 0

    def to_dict(self) -> dict:
        def _plain(value):
            return list(value) if isinstance(value, tuple) else value

        return {
            "env": self.env.to_dict(),
            "goal": {k: _plain(v) for k, v in sorted(self.goal.items())},
            "recovery": {k: _plain(v) for k, v in sorted(self.recovery.items())},
            "limit": self.limit,
            "min_recovery_trajectories": self.min_recovery_trajectories,
            "eval_episodes": self.eval_episodes,
            "eval_seeds": list(self.eval_seeds),
            "seed": self.seed,
        }


def resolve_run_config(raw: dict, seed_override: int | None = None) -> RunConfig:
    """Merge a raw config document over the defaults.

    Unknown keys are rejected so typos cannot silently fall back to defaults.
    The top-level seed (or its override) feeds the trainers unless they carry
    explicit seeds of their own.
    """
    known = {"env", "goal", "recovery", "limit", "min_recovery_trajectories",
             "eval_episodes", "eval_seeds", "seed"}
    unknown = set(raw) - known
    if unknown:
        raise RunConfigError(f"unknown config keys: {sorted(unknown)}")

    goal = _goal_defaults()
    recovery = _recovery_defaults()
    for section, defaults in (("goal", goal), ("recovery", recovery)):
        overrides = raw.get(section, {})
        bad = set(overrides) - set(defaults)
        if bad:
            raise RunConfigError(f"unknown {section} config keys: {sorted(bad)}")
        defaults.update(overrides)
        if isinstance(defaults.get("hidden"), list):
            defaults["hidden"] = tuple(defaults["hidden"])
        if isinstance(defaults.get("pid_gains"), list):
            defaults["pid_gains"] = tuple(defaults["pid_gains"])

    seed = int(raw.get("seed", 0))
    if seed_override is not None:
        seed = seed_override
    if "seed" not in raw.get("goal", {}):
        goal["seed"] = seed
    if "seed" not in raw.get("recovery", {}):
        recovery["seed"] = seed + 1

    config = RunConfig(
        env=EnvConfig.from_dict(raw.get("env", {})),
        goal=goal,
        recovery=recovery,
        limit=float(raw.get("limit", 1.5)),
        min_recovery_trajectories=int(raw.get("min_recovery_trajectories", 1)),
        eval_episodes=int(raw.get("eval_episodes", 100)),
        eval_seeds=tuple(int(s) for s in raw.get("eval_seeds", (0,))),
        seed=seed,
    )
    if config.limit <= 0:
        raise RunConfigError("limit must be > 0")
    if config.min_recovery_trajectories < 1:
        raise RunConfigError("min_recovery_trajectories must be >= 1")
    if config.eval_episodes < 1:
        raise RunConfigError("eval_episodes must be >= 1")
    return config


def load_run_config(path: str | Path, seed_override: int | None = None) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise RunConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise RunConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return resolve_run_config(raw, seed_override)


# -- run directory artifacts ---------------------------------------------------------

CHECKPOINT_FILES = {
    "goal_policy": "checkpoints/goal_policy.json",
    "goal_q": "checkpoints/goal_q.json",
    "recovery_policy": "checkpoints/recovery_policy.json",
    "recovery_q": "checkpoints/recovery_q.json",
    "cost_q": "checkpoints/cost_q.json",
}

GOAL_METRIC_COLUMNS = [
    "epoch", "q_loss", "policy_loss", "mean_weight", "adv_threshold",
    "success_rate", "discounted_return", "cost_return",
]
RECOVERY_METRIC_COLUMNS = [
    "epoch", "qc_loss", "qr_loss", "recovery_policy_loss", "lambda",
    "mean_qc", "fraction_batch_above_l",
]
EVAL_METRIC_COLUMNS = [
    "seed", "episodes", "success_rate", "discounted_return", "cost_return",
    "cost_return_discounted", "recovery_activation_rate",
]


def write_manifest(run_dir: str | Path, manifest: dict) -> Path:
    path = Path(run_dir) / "manifest.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_manifest(run_dir: str | Path) -> dict:
    path = Path(run_dir) / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"missing manifest: {path}")
    return json.loads(path.read_text())


class CsvMetricsWriter:
    """Streams metric rows to a CSV file with a fixed column order."""

    def __init__(self, path: str | Path, columns: list[str]):
        self.path = Path(path)
        self.columns = columns
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = self.path.open("w", newline="")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        self._writer.writerow(columns)

    def write(self, row: dict) -> None:
        self._writer.writerow([repr(row[c]) if isinstance(row[c], float) else row[c]
                               for c in self.columns])
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_metrics_csv(path: str | Path) -> list[dict]:
    path = Path(path)
    with path.open() as fh:
        reader = csv.DictReader(fh)
        rows = []
        for record in reader:
            row = {}
            for key, value in record.items():
                try:
                    row[key] = float(value)
                except (TypeError, ValueError):
                    row[key] = value
            rows.append(row)
    return rows
