"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line (run with ``pytest tests/test_acceptance.py -v -s``).

The pipeline criteria train real runs at desk scale; expect the full module
to take tens of minutes on one core. Everything is seeded and deterministic.
"""

import json
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

import rbsl
from chain_mdp import (
    FixedChainPolicy,
    all_pairs_batch,
    critic_q_table,
    dp_cost_fixed_point,
    dp_reward_fixed_point,
)
from rbsl.agent import DECISION_RECOVERY, RbslAgent, evaluate
from rbsl.cli import load_agent, main
from rbsl.dataset import (
    TrajectoryDataset,
    filter_expert,
    filter_recovery,
    relabel_sample,
    shape_costs,
)
from rbsl.env import EnvConfig, achieved_from_observation
from rbsl.goal_policy import q_value_update, wgcsl_weights
from rbsl.losses import critic_inputs, policy_inputs
from rbsl.nets import Adam, init_mlp, polyak_update
from rbsl.recovery import cost_critic_update
from test_dataset import make_traj
from test_losses import assert_loss_gradient, make_critic, make_policy, small_batch
from rbsl.losses import (
    critic_td_loss,
    critic_td_loss_with_penalty,
    lagrangian_policy_loss,
    weighted_bc_q_loss,
)

CONFIG_PATH = Path(__file__).resolve().parent.parent / "configs" / "reach2d_mix.json"

LIMIT_METRIC = 1.5  # the cost-return bound the criteria are stated against

PIPELINE_SEEDS = [0, 1, 2, 3, 4]
MIXTURE_SEEDS = [0, 1, 2]
EVAL_EPISODES = 100
TOTAL_TRAJECTORIES = 400  # 2e4 transitions at the 50-step horizon


def report(criterion, passed, detail):
    marker = "PASS" if passed else "FAIL"
    print(f"[acceptance] criterion {criterion}: {marker} — {detail}")
    assert passed, f"criterion {criterion}: {detail}"


# -- shared desk-scale pipeline -------------------------------------------------------


def build_mixture(env_config, fraction, seed):
    """Two-tier expert pool (clean + sloppy) mixed with uniform-random data.

    Small expert budgets lean on the sloppy tier: its successful-but-violating
    trajectories are what keeps the filtered recovery set populated.
    """
    n_expert = int(TOTAL_TRAJECTORIES * fraction)
    n_random = TOTAL_TRAJECTORIES - n_expert
    if fraction >= 0.5:
        clean_episodes = max(2, int(n_expert * 0.55) + 2)
        sloppy_episodes = max(2, int(n_expert * 0.5) + 2)
    else:
        clean_episodes = max(2, int(n_expert * 0.35) + 2)
        sloppy_episodes = max(2, int(n_expert * 0.75) + 2)
    rng_seeds = np.random.SeedSequence((seed, 77)).generate_state(3)
    clean = rbsl.rollout_expert(env_config, episodes=clean_episodes,
                                noise_std=0.01, seed=int(rng_seeds[0]))
    sloppy = rbsl.rollout_expert(env_config, episodes=sloppy_episodes,
                                 noise_std=0.05, seed=int(rng_seeds[1]))
    expert = TrajectoryDataset(
        env_config=env_config,
        trajectories=clean.trajectories + sloppy.trajectories,
    )
    random_pool = rbsl.rollout_random(env_config, episodes=max(n_random, 1),
                                      seed=int(rng_seeds[2]))
    return rbsl.mix(expert, random_pool, fraction, seed=seed, total=TOTAL_TRAJECTORIES)


def run_pipeline(tmp_root, fraction, seed):
    """Train one run through the CLI and evaluate it with and without switching."""
    import time

    started = time.monotonic()
    run_config = json.loads(CONFIG_PATH.read_text())
    env_config = EnvConfig.from_dict(run_config["env"])
    dataset = build_mixture(env_config, fraction, seed)

    data_path = tmp_root / f"mix_f{fraction}_s{seed}.jsonl"
    rbsl.save(dataset, data_path)
    run_dir = tmp_root / f"run_f{fraction}_s{seed}"

    runner = CliRunner()
    result = runner.invoke(main, [
        "train", "--config", str(CONFIG_PATH), "--data", str(data_path),
        "--out", str(run_dir), "--seed", str(seed),
    ])
    assert result.exit_code == 0, result.output

    agent, env_config, manifest = load_agent(run_dir)
    rbsl_metrics, rbsl_records = evaluate(agent, env_config, EVAL_EPISODES, seed=seed + 5000)
    ablation_agent, _, _ = load_agent(run_dir, switching=False)
    abl_metrics, _ = evaluate(ablation_agent, env_config, EVAL_EPISODES, seed=seed + 5000)
    return {
        "run_dir": run_dir,
        "fraction": fraction,
        "seed": seed,
        "manifest": manifest,
        "rbsl": rbsl_metrics,
        "rbsl_records": rbsl_records,
        "ablation": abl_metrics,
        "minutes": (time.monotonic() - started) / 60.0,
    }


@pytest.fixture(scope="session")
def pipeline_root(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


@pytest.fixture(scope="session")
def half_mixture_runs(pipeline_root):
    return [run_pipeline(pipeline_root, 0.5, seed) for seed in PIPELINE_SEEDS]


@pytest.fixture(scope="session")
def fraction_runs(pipeline_root, half_mixture_runs):
    runs = {0.5: half_mixture_runs}
    for fraction in (1.0, 0.2):
        runs[fraction] = [run_pipeline(pipeline_root, fraction, seed)
                          for seed in MIXTURE_SEEDS]
    return runs


# -- criterion 1: directional reproduction -------------------------------------------


def test_criterion_1_directional_reproduction(half_mixture_runs):
    success = float(np.mean([r["rbsl"].success_rate for r in half_mixture_runs]))
    rbsl_cost = float(np.mean([r["rbsl"].cost_return for r in half_mixture_runs]))
    ablation_cost = float(np.mean([r["ablation"].cost_return for r in half_mixture_runs]))
    relative_gap = (ablation_cost - rbsl_cost) / max(rbsl_cost, 1e-9)
    slowest = max(r["minutes"] for r in half_mixture_runs)
    detail = (
        f"success {success:.3f} (need >= 0.90), cost {rbsl_cost:.3f} (need <= {LIMIT_METRIC}), "
        f"ablation cost {ablation_cost:.3f} (+{100 * relative_gap:.0f}%, need >= +30%), "
        f"slowest seed {slowest:.1f} min (budget 20)"
    )
    report(
        1,
        success >= 0.90 and rbsl_cost <= LIMIT_METRIC and relative_gap >= 0.30
        and slowest <= 20.0,
        detail,
    )


# -- criterion 2: mixture robustness --------------------------------------------------


def test_criterion_2_mixture_robustness(fraction_runs):
    means = {
        fraction: {
            "success": float(np.mean([r["rbsl"].success_rate for r in runs])),
            "cost": float(np.mean([r["rbsl"].cost_return for r in runs])),
        }
        for fraction, runs in fraction_runs.items()
    }
    drop = means[1.0]["success"] - means[0.2]["success"]
    worst_cost = max(stats["cost"] for stats in means.values())
    detail = (
        "success by fraction "
        + ", ".join(f"{f}: {s['success']:.3f}" for f, s in sorted(means.items()))
        + f"; drop {drop:.3f} (need <= 0.25); worst cost {worst_cost:.3f} "
        f"(need <= {2 * LIMIT_METRIC})"
    )
    report(2, drop <= 0.25 and worst_cost <= 2 * LIMIT_METRIC, detail)


# -- companion checks tied to the trained pipelines -----------------------------------


def test_half_mixture_recovery_sets_are_nonempty(half_mixture_runs):
    sizes = [r["manifest"]["data"]["d_rec_size"] for r in half_mixture_runs]
    assert all(size > 0 for size in sizes), sizes


def test_switching_reduces_cost_on_same_seeds(half_mixture_runs):
    from rbsl.agent import compare_runs

    report_pairs = compare_runs(
        [r["rbsl"] for r in half_mixture_runs],
        [r["ablation"] for r in half_mixture_runs],
    )
    # Paired per-seed comparison: switching must strictly cut the cost return.
    assert all(diff < 0 for diff in report_pairs.cost_diffs), report_pairs.cost_diffs


def test_all_expert_goal_policy_reaches(fraction_runs):
    success = float(np.mean([r["ablation"].success_rate for r in fraction_runs[1.0]]))
    assert success >= 0.9


# -- criteria 3 and 4: enumerable-chain oracles ---------------------------------------


def train_chain_critic(update_step, steps=4000, seed=7):
    rng = np.random.default_rng(seed)
    batch = all_pairs_batch()
    policy = FixedChainPolicy(+1.0)
    critic = init_mlp(11, (64, 64), 1, rng)
    target = critic.clone()
    optimizer = Adam(lr=3e-3)
    for _ in range(steps):
        update_step(critic, target, policy, batch, optimizer)
        polyak_update(target, critic, 0.9)
    return critic


def test_criterion_3_cost_critic_oracle():
    gamma = 0.9

    def step(critic, target, policy, batch, optimizer):
        cost_critic_update(critic, target, policy, batch, gamma, optimizer)

    critic = train_chain_critic(step)
    error = float(np.abs(critic_q_table(critic) - dp_cost_fixed_point(gamma)).max())
    report(3, error < 1e-3, f"max |Q_C - DP| = {error:.2e} over every (state, action), need < 1e-3")


def test_criterion_4_goal_critic_oracle():
    gamma = 0.9

    def step(critic, target, policy, batch, optimizer):
        q_value_update(critic, target, policy, batch, gamma, optimizer)

    critic = train_chain_critic(step)
    error = float(np.abs(critic_q_table(critic) - dp_reward_fixed_point(gamma)).max())
    report(4, error < 1e-2, f"max |Q_g - value iteration| = {error:.2e}, need < 1e-2")


# -- criterion 5: gradient correctness ------------------------------------------------


def test_criterion_5_gradient_correctness():
    draws = 20

    def draw_td(rng):
        critic = make_critic(rng)
        obs, goal, actions = small_batch(rng)
        x = critic_inputs(obs, actions, goal)
        y = rng.normal(size=len(x))
        return critic, lambda: critic_td_loss(critic, x, y), [(critic, x)]

    def draw_penalty(rng):
        critic = make_critic(rng)
        obs, goal, actions = small_batch(rng)
        x = critic_inputs(obs, actions, goal)
        x_neg = critic_inputs(obs, rng.uniform(-0.05, 0.05, size=actions.shape), goal)
        y = rng.normal(size=len(x))
        return (critic,
                lambda: critic_td_loss_with_penalty(critic, x, y, x_neg, 0.5),
                [(critic, x), (critic, x_neg)])

    def draw_bcq(rng):
        policy, critic = make_policy(rng), make_critic(rng)
        obs, goal, actions = small_batch(rng)
        weights = rng.uniform(0.05, 2.0, size=len(obs))
        alpha = float(rng.uniform(0.5, 2.0))
        p_in = policy_inputs(obs, goal)
        c_in = critic_inputs(obs, policy.forward(p_in), goal)
        return (policy,
                lambda: weighted_bc_q_loss(policy, critic, obs, goal, actions, weights, alpha),
                [(policy, p_in), (critic, c_in)])

    def draw_lagrangian(rng):
        policy, q_r, q_c = make_policy(rng), make_critic(rng), make_critic(rng)
        obs, goal, _ = small_batch(rng)
        lam = float(rng.uniform(0.5, 10.0))
        p_in = policy_inputs(obs, goal)
        c_in = critic_inputs(obs, policy.forward(p_in), goal)
        return (policy,
                lambda: lagrangian_policy_loss(policy, q_r, q_c, obs, goal, lam),
                [(policy, p_in), (q_r, c_in), (q_c, c_in)])

    for name, case in (("td", draw_td), ("td+penalty", draw_penalty),
                       ("weighted-bc+q", draw_bcq), ("lagrangian", draw_lagrangian)):
        assert_loss_gradient(case, n_draws=draws, seed=123)
    report(5, True, f"4 losses x {draws} random draws within 1e-4 of central differences")


# -- criterion 6: pipeline invariant suite --------------------------------------------


def test_criterion_6_pipeline_invariants():
    rng = np.random.default_rng(2024)
    cases = 1000

    # Relabel reward consistency.
    for _ in range(cases):
        horizon = int(rng.integers(2, 12))
        traj = make_traj([0] * horizon, rng.integers(0, 2, size=horizon).tolist(),
                         final_pos=(0.9, 0.9))
        t = int(rng.integers(0, horizon))
        sample = relabel_sample(traj, t, rng)
        achieved = achieved_from_observation(sample.next_state)
        consistent = sample.relabeled_reward == int(
            np.linalg.norm(achieved - sample.relabeled_goal) <= traj.tolerance
        )
        assert consistent and sample.horizon_gap >= 0

    # Filter subset relation and idempotence on randomized datasets.
    for _ in range(cases):
        trajs = []
        for _ in range(int(rng.integers(1, 8))):
            horizon = int(rng.integers(2, 6))
            trajs.append(make_traj(rng.integers(0, 2, size=horizon).tolist(),
                                   rng.integers(0, 2, size=horizon).tolist()))
        ds = TrajectoryDataset(env_config=EnvConfig(), trajectories=trajs)
        import warnings as _warnings

        with _warnings.catch_warnings():
            _warnings.simplefilter("ignore")
            d_e = filter_expert(ds)
            d_rec = filter_recovery(d_e)
            ids, ids_e, ids_rec = ({id(t) for t in pool}
                                   for pool in (ds, d_e, d_rec))
            assert ids_rec <= ids_e <= ids
            assert [id(t) for t in filter_expert(d_e)] == [id(t) for t in d_e]
            assert all(t.discounted_cost_return() > 0 for t in d_rec)

    # Cost shaping: exactness on the hand case plus randomized properties.
    traj = make_traj([0] * 4, [0, 1, 1, 0])
    assert shape_costs(traj).costs.tolist() == [0, 1, 0, 0]
    for _ in range(cases):
        horizon = int(rng.integers(2, 16))
        costs = rng.integers(0, 2, size=horizon)
        shaped = shape_costs(make_traj([0] * horizon, costs.tolist())).costs
        assert (shaped <= costs).all()
        keep = costs[1:] == 1
        assert (shaped[:-1][keep] == costs[:-1][keep]).all()
        assert shaped[-1] == costs[-1]
        exits = (costs[:-1] == 1) & (costs[1:] == 0)
        assert (shaped[:-1][exits] == 0).all()

    # Composed supervision weight: hand value and formula on random draws.
    hand = wgcsl_weights(np.array([0.1, 0.1, 0.3]), np.array([0, 0, 2]), 0.98,
                         10.0, 0.05, 50.0)
    assert abs(hand.weights[2] - 1.2965) < 1e-3
    for _ in range(cases):
        n = int(rng.integers(2, 64))
        advantages = rng.normal(size=n)
        gaps = rng.integers(0, 50, size=n)
        out = wgcsl_weights(advantages, gaps, 0.98, 10.0, 0.05, 80.0)
        indicator = np.where(advantages > out.threshold, 1.0, 0.05)
        expected = 0.98**gaps * np.minimum(np.exp(advantages), 10.0) * indicator
        np.testing.assert_allclose(out.weights, expected)
    report(6, True, f"relabel/filter/shaping/weight invariants hold on {cases} cases each")


# -- criterion 7: switching exactness -------------------------------------------------


def test_criterion_7_switching_exactness(half_mixture_runs):
    run = half_mixture_runs[0]
    agent, env_config, _ = load_agent(run["run_dir"])
    metrics, records = evaluate(agent, env_config, episodes=50, seed=1234)

    mismatches = 0
    for record in records:
        obs = record.states[:-1]
        goals = np.repeat(record.goal[None], len(obs), axis=0)
        proposed = agent.goal_policy.forward(policy_inputs(obs, goals))
        q_c = agent.cost_critic.forward(critic_inputs(obs, proposed, goals))[:, 0]
        expected = [DECISION_RECOVERY if q > agent.limit else "goal" for q in q_c]
        mismatches += sum(a != b for a, b in zip(record.decisions, expected))

    unlimited = RbslAgent(
        goal_policy=agent.goal_policy, recovery_policy=agent.recovery_policy,
        cost_critic=agent.cost_critic, limit=float("inf"),
    )
    ablation, _, _ = load_agent(run["run_dir"], switching=False)
    _, unlimited_records = evaluate(unlimited, env_config, episodes=20, seed=77)
    _, ablation_records = evaluate(ablation, env_config, episodes=20, seed=77)
    identical = all(
        np.array_equal(a.states, b.states) and np.array_equal(a.actions, b.actions)
        for a, b in zip(unlimited_records, ablation_records)
    )
    report(7, mismatches == 0 and identical,
           f"0 decision mismatches over 50 episodes required (got {mismatches}); "
           f"infinite-limit trajectories identical to ablation: {identical}")


# -- criterion 8: determinism ---------------------------------------------------------


def test_criterion_8_determinism(pipeline_root):
    runner = CliRunner()
    ws = pipeline_root / "determinism"
    ws.mkdir(exist_ok=True)

    datasets = []
    for name in ("ds_a.jsonl", "ds_b.jsonl"):
        result = runner.invoke(main, [
            "gen-data", "--env", "reach2d", "--policy", "expert", "--episodes", "40",
            "--seed", "11", "--out", str(ws / name), "--noise-std", "0.03",
        ])
        assert result.exit_code == 0, result.output
        datasets.append((ws / name).read_bytes())
    data_identical = datasets[0] == datasets[1]

    config = {
        "seed": 2, "limit": 0.5,
        "env": {"variant": "reach2d", "p_block": 0.7},
        "goal": {"epochs": 2, "steps_per_epoch": 10, "batch_size": 32,
                 "hidden": [16, 16], "eval_episodes": 2},
        "recovery": {"epochs": 2, "steps_per_epoch": 10, "batch_size": 32,
                     "hidden": [16, 16], "m_neg": 4},
    }
    config_path = ws / "tiny.json"
    config_path.write_text(json.dumps(config))

    artifacts = []
    for run_name in ("run_a", "run_b"):
        run_dir = ws / run_name
        result = runner.invoke(main, [
            "train", "--config", str(config_path), "--data", str(ws / "ds_a.jsonl"),
            "--out", str(run_dir),
        ])
        assert result.exit_code == 0, result.output
        result = runner.invoke(main, [
            "eval", "--run", str(run_dir), "--episodes", "5", "--seeds", "1,2",
        ])
        assert result.exit_code == 0, result.output
        blobs = {}
        for rel in ("goal_metrics.csv", "eval_metrics.csv",
                    "checkpoints/goal_policy.json", "checkpoints/goal_q.json"):
            blobs[rel] = (run_dir / rel).read_bytes()
        if (run_dir / "recovery_metrics.csv").exists():
            blobs["recovery_metrics.csv"] = (run_dir / "recovery_metrics.csv").read_bytes()
            blobs["checkpoints/cost_q.json"] = (run_dir / "checkpoints/cost_q.json").read_bytes()
        artifacts.append(blobs)
    runs_identical = artifacts[0].keys() == artifacts[1].keys() and all(
        artifacts[0][k] == artifacts[1][k] for k in artifacts[0]
    )
    report(8, data_identical and runs_identical,
           f"dataset bytes identical: {data_identical}; "
           f"checkpoint/metric bytes identical across reruns: {runs_identical}")
