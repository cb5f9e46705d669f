"""Command-line entry points: gen-data, train, eval, plot."""

from __future__ import annotations

import json
import os
from pathlib import Path

import click
import numpy as np

from . import __version__
from .agent import RbslAgent, evaluate
from .collect import rollout_expert, rollout_random
from .config import (
    ARTIFACT_NAME,
    CHECKPOINT_FILES,
    EVAL_METRIC_COLUMNS,
    GOAL_METRIC_COLUMNS,
    RECOVERY_METRIC_COLUMNS,
    CsvMetricsWriter,
    RunConfigError,
    load_manifest,
    load_run_config,
    read_metrics_csv,
)
from .dataset import filter_expert, filter_recovery, load, mix, save
from .env import ConfigurationError, EnvConfig
from .goal_policy import GoalPolicyTrainer
from .nets import load_checkpoint
from .recovery import RecoveryPolicyTrainer


def _seed_with_env_override(seed: int) -> int:
    """RBSL_SEED beats the --seed flag when set."""
    value = os.environ.get("RBSL_SEED")
    return int(value) if value else seed


@click.group()
@click.version_option(__version__)
def main():
    """Constrained offline goal-conditioned RL laboratory."""


@main.command("gen-data")
@click.option("--env", "variant", type=click.Choice(["reach2d", "push2d"]), required=True)
@click.option("--policy", type=click.Choice(["expert", "random"]), required=True)
@click.option("--episodes", type=click.IntRange(min=1), required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), required=True)
@click.option("--noise-std", type=click.FloatRange(min=0), default=0.01, show_default=True,
              help="Gaussian action noise of the scripted expert.")
@click.option("--p-block", type=click.FloatRange(0, 1), default=0.7, show_default=True,
              help="Probability that the obstacle blocks the straight path.")
def cmd_gen_data(variant, policy, episodes, seed, out, noise_std, p_block):
    """Generate an offline dataset file with the scripted expert or a random policy."""
    seed = _seed_with_env_override(seed)
    config = EnvConfig(variant=variant, p_block=p_block, seed=seed)
    try:
        if policy == "expert":
            dataset = rollout_expert(config, episodes=episodes, noise_std=noise_std, seed=seed)
        else:
            dataset = rollout_random(config, episodes=episodes, seed=seed)
    except ConfigurationError as exc:
        raise click.ClickException(str(exc))
    save(dataset, out)
    click.echo(json.dumps({"path": str(out), **dataset.stats().to_dict()}))


@main.command("train")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--data", "data_path", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--data-random", "random_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Random-policy pool to mix with --data (the expert pool).")
@click.option("--expert-fraction", type=click.FloatRange(0, 1), default=None,
              help="Expert share of the mixture; requires --data-random.")
@click.option("--out", "run_dir", type=click.Path(file_okay=False, path_type=Path),
              required=True)
@click.option("--seed", type=int, default=None, help="Overrides the config seed.")
@click.option("--ablation", type=click.Choice(["wgcsl-only"]), default=None,
              help="Skip recovery training and disable switching.")
def cmd_train(config_path, data_path, random_path, expert_fraction, run_dir, seed, ablation):
    """Run the full training pipeline into a self-describing run directory."""
    if (random_path is None) != (expert_fraction is None):
        raise click.UsageError("--data-random and --expert-fraction go together")
    seed_override = _seed_with_env_override(seed) if (seed is not None or os.environ.get("RBSL_SEED")) else None
    try:
        run_config = load_run_config(config_path, seed_override=seed_override)
    except RunConfigError as exc:
        raise click.ClickException(str(exc))

    dataset = load(data_path)
    data_info = {"path": str(data_path), "random_path": None, "expert_fraction": None}
    if random_path is not None:
        random_pool = load(random_path)
        dataset = mix(dataset, random_pool, expert_fraction, seed=run_config.seed)
        data_info.update(random_path=str(random_path), expert_fraction=expert_fraction)

    gamma = run_config.goal["gamma"]
    d_e = filter_expert(dataset, gamma)
    d_rec = filter_recovery(d_e, gamma)

    recovery_planned = ablation is None and len(d_rec) >= run_config.min_recovery_trajectories
    if ablation is None and not recovery_planned:
        click.echo(
            f"warning: recovery dataset has {len(d_rec)} trajectories "
            f"(minimum {run_config.min_recovery_trajectories}); switching will be disabled",
            err=True,
        )

    run_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "artifact": {"name": ARTIFACT_NAME, "version": __version__},
        "seed": run_config.seed,
        "config": run_config.to_dict(),
        "data": {
            **data_info,
            "stats": dataset.stats(gamma).to_dict(),
            "d_e_size": len(d_e),
            "d_rec_size": len(d_rec),
        },
        "ablation": ablation,
        "recovery_trained": recovery_planned,
        "switching_enabled": recovery_planned,
        "checkpoints": dict(CHECKPOINT_FILES),
        "metrics": {"goal": "goal_metrics.csv", "recovery": "recovery_metrics.csv"},
    }
    from .config import write_manifest

    write_manifest(run_dir, manifest)

    goal_trainer = GoalPolicyTrainer(**run_config.goal)
    with CsvMetricsWriter(run_dir / "goal_metrics.csv", GOAL_METRIC_COLUMNS) as writer:
        goal_trainer.fit(dataset, run_dir=run_dir, metrics_callback=writer.write)

    if recovery_planned:
        recovery_trainer = RecoveryPolicyTrainer(**run_config.recovery)
        with CsvMetricsWriter(run_dir / "recovery_metrics.csv", RECOVERY_METRIC_COLUMNS) as writer:
            recovery_trainer.fit(d_rec, goal_trainer.policy_, run_dir=run_dir,
                                 metrics_callback=writer.write)
        recovery_trainer._save_networks(run_dir)
    click.echo(json.dumps({"run_dir": str(run_dir), "recovery_trained": recovery_planned}))


def load_agent(run_dir: str | Path, switching: bool | None = None):
    """Rebuild the composed agent and its environment from a run directory."""
    run_dir = Path(run_dir)
    manifest = load_manifest(run_dir)
    env_config = EnvConfig.from_dict(manifest["config"]["env"])

    def _load_net(key):
        path = run_dir / manifest["checkpoints"][key]
        if not path.exists():
            raise FileNotFoundError(f"missing checkpoint: {path}")
        return load_checkpoint(path)[0]

    goal_policy = _load_net("goal_policy")
    recovery_policy = cost_critic = None
    if manifest["recovery_trained"]:
        recovery_policy = _load_net("recovery_policy")
        cost_critic = _load_net("cost_q")
    enabled = manifest["switching_enabled"] if switching is None else switching
    agent = RbslAgent(
        goal_policy=goal_policy,
        recovery_policy=recovery_policy,
        cost_critic=cost_critic,
        limit=manifest["config"]["limit"],
        switching_enabled=enabled,
    )
    return agent, env_config, manifest


@main.command("eval")
@click.option("--run", "run_dir", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--episodes", type=click.IntRange(min=1), default=100, show_default=True)
@click.option("--seeds", default="0", show_default=True,
              help="Comma-separated evaluation seeds.")
@click.option("--no-switching", is_flag=True, default=False,
              help="Force the goal policy everywhere (ablation behavior).")
@click.option("--out", "out_path", type=click.Path(dir_okay=False, path_type=Path),
              default=None, help="Metrics CSV destination (default: RUN/eval_metrics.csv).")
@click.option("--dump-episodes", type=click.Path(dir_okay=False, path_type=Path), default=None,
              help="Also dump per-episode records as JSON Lines.")
def cmd_eval(run_dir, episodes, seeds, no_switching, out_path, dump_episodes):
    """Evaluate a trained run over the given seeds; emits per-seed rows plus
    mean and std aggregate rows."""
    try:
        seed_list = [int(s) for s in seeds.split(",") if s.strip() != ""]
    except ValueError:
        raise click.UsageError(f"--seeds must be comma-separated integers, got {seeds!r}")
    if not seed_list:
        raise click.UsageError("--seeds must name at least one seed")
    try:
        agent, env_config, manifest = load_agent(run_dir, switching=False if no_switching else None)
    except FileNotFoundError as exc:
        raise click.ClickException(str(exc))

    gamma = manifest["config"]["goal"]["gamma"]
    out_path = out_path or Path(run_dir) / "eval_metrics.csv"
    all_rows = []
    records_fh = open(dump_episodes, "w") if dump_episodes else None
    try:
        with CsvMetricsWriter(out_path, EVAL_METRIC_COLUMNS) as writer:
            for seed in seed_list:
                metrics, records = evaluate(agent, env_config, episodes, seed, gamma)
                row = {c: getattr(metrics, c) if c != "seed" else seed
                       for c in EVAL_METRIC_COLUMNS}
                writer.write(row)
                all_rows.append(row)
                if records_fh is not None:
                    for record in records:
                        records_fh.write(json.dumps({"seed": seed, **record.to_dict()},
                                                    separators=(",", ":")) + "\n")
            numeric = [c for c in EVAL_METRIC_COLUMNS if c != "seed"]
            for label, reducer in (("mean", np.mean), ("std", np.std)):
                agg = {"seed": label}
                agg.update({c: float(reducer([r[c] for r in all_rows])) for c in numeric})
                writer.write(agg)
    finally:
        if records_fh is not None:
            records_fh.close()
    summary = {c: float(np.mean([r[c] for r in all_rows]))
               for c in ("success_rate", "cost_return")}
    click.echo(json.dumps({"metrics": str(out_path), **summary}))


@main.command("plot")
@click.option("--metrics", "metrics_path", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--limit", type=float, default=None,
              help="Draw the constraint limit line at this level.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False, path_type=Path),
              required=True)
def cmd_plot(metrics_path, limit, out_path):
    """Render training curves (discounted return and cost return per epoch)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    try:
        rows = read_metrics_csv(metrics_path)
    except Exception as exc:
        raise click.ClickException(f"cannot parse metrics CSV: {exc}")
    if not rows:
        raise click.ClickException(f"metrics file {metrics_path} has no data rows")
    for column in ("epoch", "discounted_return", "cost_return"):
        if column not in rows[0]:
            raise click.ClickException(f"metrics file lacks column {column!r}")

    epochs = [r["epoch"] for r in rows]
    fig, (ax_ret, ax_cost) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax_ret.plot(epochs, [r["discounted_return"] for r in rows])
    ax_ret.set_xlabel("epoch")
    ax_ret.set_ylabel("discounted return")
    ax_cost.plot(epochs, [r["cost_return"] for r in rows], color="tab:red")
    if limit is not None:
        ax_cost.axhline(limit, color="black", linestyle=":", label=f"limit {limit}")
        ax_cost.legend()
    ax_cost.set_xlabel("epoch")
    ax_cost.set_ylabel("cost return")
    fig.tight_layout()
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path)
    plt.close(fig)
    click.echo(json.dumps({"plot": str(out_path), "epochs": len(rows)}))


if __name__ == "__main__":
    main()
