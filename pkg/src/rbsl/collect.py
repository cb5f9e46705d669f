"""Dataset generation: uniform-random rollouts and a scripted detour expert.

The expert substitutes for an online-trained policy at desk scale: it steers
the goal entity straight at the target, and when the straight segment is
blocked by the inflated obstacle it routes through the obstacle corner nearest
that segment, pushed outward by a safety margin.
"""

from __future__ import annotations

import numpy as np

from .env import EnvConfig, EnvState, Goal, KinematicEnv
from .dataset import Trajectory, TrajectoryDataset
from .geometry import box_corners, point_segment_distance

# Extra clearance added outside the inflated box when picking a detour corner.
DETOUR_MARGIN = 0.03

DEFAULT_EXPERT_NOISE = 0.01


def _detour_waypoints(obstacle) -> np.ndarray:
    corners = box_corners(obstacle.center, obstacle.inflated_half_extents)
    return corners + DETOUR_MARGIN * np.sign(corners - obstacle.center)


def _steering_target(env: KinematicEnv, state: EnvState, goal: Goal) -> np.ndarray:
    """Where the goal entity should head this step: the target, or a corner.

    When the straight segment to the target is blocked, the next hop of the
    shortest obstacle-clearing path through the outward corner waypoints is
    used. Selecting the hop by shortest path (rather than, say, proximity to
    the blocked segment) leaves no stuck fixed points at corners.
    """
    position = env.phi(state)
    obstacle = state.obstacle
    if not obstacle.blocks_segment(position, goal.target):
        return goal.target

    waypoints = _detour_waypoints(obstacle)
    nodes = [position, goal.target, *waypoints]
    n = len(nodes)
    dist = np.full((n, n), np.inf)
    for i in range(n):
        for j in range(i + 1, n):
            if not obstacle.blocks_segment(nodes[i], nodes[j]):
                dist[i, j] = dist[j, i] = float(np.linalg.norm(nodes[i] - nodes[j]))

    # Dijkstra from the current position (node 0) to the target (node 1).
    best = np.full(n, np.inf)
    best[0] = 0.0
    first_hop = [None] * n
    visited = np.zeros(n, dtype=bool)
    for _ in range(n):
        u = int(np.argmin(np.where(visited, np.inf, best)))
        if not np.isfinite(best[u]):
            break
        visited[u] = True
        for v in range(n):
            if visited[v] or not np.isfinite(dist[u, v]):
                continue
            candidate = best[u] + dist[u, v]
            if candidate < best[v] - 1e-12:
                best[v] = candidate
                first_hop[v] = nodes[v] if u == 0 else first_hop[u]

    if first_hop[1] is not None:
        return first_hop[1]
    # Position is inside the inflated box (noise or a random start can do
    # this): escape through the nearest waypoint.
    gaps = [float(np.linalg.norm(w - position)) for w in waypoints]
    return waypoints[int(np.argmin(gaps))]


def _fit_to_action_box(step: np.ndarray, action_max: float) -> np.ndarray:
    """Scale a desired displacement into the action box without bending it.

    Per-axis clipping would change the direction of any step whose larger
    component saturates, bowing paths off the straight line.
    """
    largest = float(np.max(np.abs(step)))
    if largest <= action_max:
        return step
    return step * (action_max / largest)


def expert_action(
    env: KinematicEnv,
    state: EnvState,
    goal: Goal,
    rng: np.random.Generator,
    noise_std: float,
) -> np.ndarray:
    """Clipped proportional step toward the steering target, plus Gaussian noise."""
    cfg = env.config
    entity = env.phi(state)

    if goal.achieved(entity):
        step = np.zeros(2)
    elif cfg.variant == "push2d":
        step = _push_step(env, state, goal)
    else:
        step = _steering_target(env, state, goal) - state.agent_pos

    action = _fit_to_action_box(step, cfg.action_max)
    if noise_std > 0:
        action = action + rng.normal(0.0, noise_std, size=2)
    return action


def _push_step(env: KinematicEnv, state: EnvState, goal: Goal) -> np.ndarray:
    """Two-phase pusher: take station behind the object, then drive into it.

    Push steps are capped so the agent never crosses the object's center in
    one step; crossing would flip the contact direction and shove the object
    backward.
    """
    cfg = env.config
    r_c = cfg.contact_radius
    waypoint = _steering_target(env, state, goal)
    push_dir = waypoint - state.object_pos
    norm = float(np.linalg.norm(push_dir))
    if norm < 1e-9:
        return np.zeros(2)
    push_dir = push_dir / norm

    station = state.object_pos - 0.8 * r_c * push_dir
    to_station = station - state.agent_pos
    if float(np.linalg.norm(to_station)) > 0.5 * r_c:
        blocked_by_object = (
            point_segment_distance(state.object_pos, state.agent_pos, station) < 0.5 * r_c
        )
        if blocked_by_object:
            # Walking straight would plow through the object; sidestep around it.
            agent_obj = state.object_pos - state.agent_pos
            lateral = np.array([-agent_obj[1], agent_obj[0]])
            lateral /= max(float(np.linalg.norm(lateral)), 1e-9)
            if float(np.dot(lateral, to_station)) < 0:
                lateral = -lateral
            return lateral * cfg.action_max
        return to_station

    to_object = state.object_pos - state.agent_pos
    gap = float(np.linalg.norm(to_object))
    if gap < 1e-9:
        return push_dir * 0.5 * r_c
    return to_object / gap * min(cfg.action_max, max(gap - 0.1 * r_c, 0.0))


def _run_episode(
    env: KinematicEnv, seed: int, policy, rng: np.random.Generator, provenance: str
) -> Trajectory:
    cfg = env.config
    state, goal = env.reset(seed)
    states = [env.observe(state)]
    actions, rewards, costs = [], [], []
    for _ in range(cfg.horizon):
        action = policy(state, goal, rng)
        result = env.step(state, action, goal)
        actions.append(np.clip(action, -cfg.action_max, cfg.action_max))
        rewards.append(result.reward)
        costs.append(result.cost)
        states.append(env.observe(result.state))
        state = result.state
    return Trajectory(
        states=np.asarray(states),
        actions=np.asarray(actions),
        rewards=np.asarray(rewards, dtype=int),
        costs=np.asarray(costs, dtype=int),
        goal=goal.target.copy(),
        tolerance=goal.tolerance,
        obstacle=state.obstacle,
        provenance=provenance,
    )


def _collect(config: EnvConfig, episodes: int, seed: int, policy, provenance: str) -> TrajectoryDataset:
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    env = KinematicEnv(config)
    episode_seeds = np.random.SeedSequence(seed).generate_state(episodes)
    rng = np.random.default_rng(np.random.SeedSequence((seed, 1)))
    return TrajectoryDataset(
        env_config=config,
        trajectories=[_run_episode(env, int(s), policy, rng, provenance) for s in episode_seeds],
    )


def rollout_random(config: EnvConfig, episodes: int, seed: int) -> TrajectoryDataset:
    """Roll episodes with actions drawn uniformly from the action box."""

    def policy(state, goal, rng):
        return rng.uniform(-config.action_max, config.action_max, size=2)

    return _collect(config, episodes, seed, policy, "random")


def rollout_expert(
    config: EnvConfig,
    episodes: int,
    noise_std: float = DEFAULT_EXPERT_NOISE,
    seed: int = 0,
) -> TrajectoryDataset:
    """Roll episodes with the scripted detour controller."""
    if noise_std < 0:
        raise ValueError("noise_std must be >= 0")
    env = KinematicEnv(config)

    def policy(state, goal, rng):
        return expert_action(env, state, goal, rng, noise_std)

    return _collect(config, episodes, seed, policy, "expert")
