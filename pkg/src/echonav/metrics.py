"""Navigation metrics, evaluation protocol, leakage probe, and exports.

SR is the raw success fraction; SPL weighs success by shortest-path over
executed path length; SNA applies the same ratio to action counts against a
(cell, heading) optimum that includes the terminal Stop. Evaluation runs
greedily and splits results by whether the episode's sound category was in
the training (heard) set.
"""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .acoustics import HEARD_CATEGORIES, AcousticConfig, render
from .autodiff import Tensor
from .gridworld import (Action, AgentPose, Episode, NavEnv, relative_angles)
from .policy import PolicyNetwork, act
from .scenes import SceneGrid

PROBE_HIDDEN = 64  # fixed probe capacity so leakage numbers are comparable


@dataclass
class EpisodeResult:
    success: bool
    path_length: float
    shortest_path: float
    action_count: int
    min_action_count: int
    category_id: int
    goal: tuple[int, int]
    trajectory: list[AgentPose]


@dataclass
class MetricsSummary:
    sr: float
    spl: float
    sna: float
    episode_count: int
    split: str


def shortest_path_oracle(scene: SceneGrid, start: AgentPose,
                         goal: tuple[int, int]) -> tuple[float, int]:
    """Shortest path length and minimum action count from a posed start.

    Length is a cell-graph breadth-first search; the action optimum searches
    (cell, heading) states where moves and 90-degree turns each cost one
    action, plus the final Stop.
    """
    if not scene.is_free(start.x, start.y) or not scene.is_free(*goal):
        raise ValueError("start and goal must be free cells")
    dist = scene.distance_field(goal)[start.y, start.x]
    if not np.isfinite(dist):
        raise ValueError(f"goal {goal} unreachable from ({start.x}, {start.y})")
    return float(dist), _min_actions(scene, start, goal)


def _min_actions(scene: SceneGrid, start: AgentPose, goal: tuple[int, int]) -> int:
    from .gridworld import HEADING_VECTORS

    best = {(start.x, start.y, start.heading): 0}
    queue = deque([(start.x, start.y, start.heading)])
    while queue:
        x, y, h = queue.popleft()
        cost = best[(x, y, h)]
        moves = [(x, y, (h + 1) % 4), (x, y, (h - 1) % 4)]
        vx, vy = HEADING_VECTORS[h]
        if scene.is_free(x + vx, y + vy):
            moves.append((x + vx, y + vy, h))
        for state in moves:
            if state not in best:
                best[state] = cost + 1
                queue.append(state)
    goal_costs = [c for (x, y, _), c in best.items() if (x, y) == goal]
    if not goal_costs:
        raise ValueError(f"goal {goal} unreachable from ({start.x}, {start.y})")
    return min(goal_costs) + 1  # terminal Stop counts as an action


def oracle_actions(scene: SceneGrid, start: AgentPose, goal: tuple[int, int]) -> list[Action]:
    """A minimum-length action sequence reaching the goal, ending with Stop."""
    from .gridworld import HEADING_VECTORS

    best = {(start.x, start.y, start.heading): (0, None, None)}
    queue = deque([(start.x, start.y, start.heading)])
    target = None
    while queue:
        node = queue.popleft()
        x, y, h = node
        if (x, y) == goal and target is None:
            target = node
            break
        cost = best[node][0]
        vx, vy = HEADING_VECTORS[h]
        options = [((x, y, (h + 1) % 4), Action.TURN_LEFT),
                   ((x, y, (h - 1) % 4), Action.TURN_RIGHT)]
        if scene.is_free(x + vx, y + vy):
            options.append(((x + vx, y + vy, h), Action.MOVE_FORWARD))
        for state, action in options:
            if state not in best:
                best[state] = (cost + 1, node, action)
                queue.append(state)
    if target is None:
        raise ValueError(f"goal {goal} unreachable from ({start.x}, {start.y})")
    actions: list[Action] = [Action.STOP]
    node = target
    while best[node][1] is not None:
        _, parent, action = best[node]
        actions.append(action)
        node = parent
    actions.reverse()
    return actions


def compute_metrics(results: list[EpisodeResult], split: str = "all") -> MetricsSummary:
    """Aggregate SR, SPL, and SNA; failures contribute zero to every metric."""
    if not results:
        raise ValueError("cannot summarize zero episodes")
    sr = spl = sna = 0.0
    for r in results:
        if not r.success:
            continue
        sr += 1.0
        spl += r.shortest_path / max(r.path_length, r.shortest_path)
        sna += r.min_action_count / max(r.action_count, r.min_action_count)
    n = len(results)
    return MetricsSummary(sr=sr / n, spl=spl / n, sna=sna / n,
                          episode_count=n, split=split)


def run_episode(env: NavEnv, agent) -> EpisodeResult:
    """Play one episode with agent(observation, env) -> Action."""
    obs = env.reset()
    scene, episode = env.scene, env.episode
    start = env.pose
    shortest, min_actions = shortest_path_oracle(scene, start, episode.source)
    trajectory = [start]
    path_length = 0.0
    actions_taken = 0
    success = False
    while True:
        action = agent(obs, env)
        prev = env.pose
        result = env.step(action)
        actions_taken += 1
        if (env.pose.x, env.pose.y) != (prev.x, prev.y):
            path_length += 1.0
        trajectory.append(env.pose)
        if result.done:
            success = result.info["success"]
            break
        obs = result.observation
    return EpisodeResult(success=success, path_length=path_length,
                         shortest_path=shortest, action_count=actions_taken,
                         min_action_count=min_actions,
                         category_id=episode.category_id, goal=episode.source,
                         trajectory=trajectory)


class PolicyAgent:
    """Greedy (or sampling) recurrent policy agent for evaluation."""

    def __init__(self, net: PolicyNetwork, mode: str = "greedy",
                 rng: np.random.Generator | None = None):
        self.net = net
        self.mode = mode
        self.rng = rng
        self.hidden = net.initial_hidden(1)

    def __call__(self, obs, env) -> Action:
        if obs.prev_action is None:
            self.hidden = self.net.initial_hidden(1)
        out = self.net.forward(obs.depth[None, :], obs.audio.flat()[None, :],
                               obs.prev_action_onehot()[None, :], self.hidden,
                               adversary_weight=0.0)
        self.hidden = out.hidden.data
        action, _ = act(out.action_logits.data[0], self.rng, mode=self.mode)
        return Action(action)


class RandomAgent:
    """Uniform action baseline; episodes end on the first sampled Stop."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng

    def __call__(self, obs, env) -> Action:
        return Action(int(self.rng.integers(len(Action))))


class OracleAgent:
    """Scripted shortest-path follower used to pin the metric ceiling."""

    def __init__(self):
        self._plan: list[Action] = []

    def __call__(self, obs, env) -> Action:
        if obs.prev_action is None:
            self._plan = oracle_actions(env.scene, env.pose, env.episode.source)
        return self._plan.pop(0)


def evaluate(agent_factory, scenes_by_id: dict[int, SceneGrid],
             episodes: list[Episode], signatures, cfg: AcousticConfig,
             depth_noise_std: float = 0.0,
             noise_seed: int | None = None) -> tuple[dict[str, MetricsSummary], list[EpisodeResult]]:
    """Run every episode once, grouped into heard/unheard category splits.

    agent_factory() builds a fresh agent; noise settings reproduce the
    robustness protocol (audio SNR from cfg, optional depth noise).
    """
    if not episodes:
        raise ValueError("no episodes to evaluate")
    noise_rng = None
    if noise_seed is not None and (cfg.noise_snr_db is not None or depth_noise_std > 0):
        noise_rng = np.random.Generator(np.random.PCG64(noise_seed))
    env = NavEnv(scenes_by_id, episodes, signatures, cfg,
                 depth_noise_std=depth_noise_std, noise_rng=noise_rng)
    agent = agent_factory()
    results = [run_episode(env, agent) for _ in episodes]
    heard = [r for r in results if r.category_id in HEARD_CATEGORIES]
    unheard = [r for r in results if r.category_id not in HEARD_CATEGORIES]
    summaries = {}
    if heard:
        summaries["heard"] = compute_metrics(heard, split="heard")
    if unheard:
        summaries["unheard"] = compute_metrics(unheard, split="unheard")
    return summaries, results


# --- semantic leakage probe ---------------------------------------------------


def probe_features(net: PolicyNetwork, scenes: list[SceneGrid], signatures,
                   cfg: AcousticConfig, n_samples: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Frozen audio-encoder features for renders at random poses and sources."""
    rng = np.random.Generator(np.random.PCG64(seed))
    audio_rows = []
    labels = []
    for _ in range(n_samples):
        scene = scenes[rng.integers(len(scenes))]
        free = scene.free_cells()
        pose_cell = free[rng.integers(len(free))]
        source = free[rng.integers(len(free))]
        heading = int(rng.integers(4))
        category = int(HEARD_CATEGORIES[rng.integers(len(HEARD_CATEGORIES))])
        elevation = float(rng.integers(3))
        pose = AgentPose(pose_cell[0], pose_cell[1], heading)
        episode = Episode(scene_id=scene.scene_id, start=pose, source_x=source[0],
                          source_y=source[1], source_elevation=elevation,
                          category_id=category)
        yaw, pitch = relative_angles(pose, episode)
        dist = scene.distance_field(source)[pose_cell[1], pose_cell[0]]
        if not np.isfinite(dist):
            continue
        spec = render(signatures[category], float(dist), yaw, pitch, cfg)
        audio_rows.append(spec.flat())
        labels.append(category)
    audio = np.stack(audio_rows)
    features = net.encode_audio(Tensor(audio)).data
    return features, np.array(labels, dtype=np.int64)


def train_probe(features: np.ndarray, labels: np.ndarray, num_classes: int,
                seed: int, epochs: int = 60, batch_size: int = 128,
                lr: float = 1e-3, holdout_fraction: float = 0.25) -> float:
    """Fit a fresh two-hidden-layer classifier on frozen features.

    Returns held-out accuracy: high means the features still carry category
    information, chance-level means they are category-agnostic.
    """
    if len(features) < 8:
        raise ValueError("not enough probe samples")
    rng = np.random.Generator(np.random.PCG64(seed))
    order = rng.permutation(len(features))
    n_holdout = max(1, int(len(features) * holdout_fraction))
    test_idx, train_idx = order[:n_holdout], order[n_holdout:]

    dims = [features.shape[1], PROBE_HIDDEN, PROBE_HIDDEN, num_classes]
    params = []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        bound = math.sqrt(6.0 / (d_in + d_out))
        params.append(Tensor(rng.uniform(-bound, bound, size=(d_in, d_out)).astype(np.float32),
                             requires_grad=True))
        params.append(Tensor(np.zeros(d_out, dtype=np.float32), requires_grad=True))

    def forward(x: np.ndarray) -> ad.Tensor:
        h = Tensor(x)
        for i in range(0, len(params), 2):
            h = ad.add(ad.matmul(h, params[i]), params[i + 1])
            if i + 2 < len(params):
                h = ad.relu(h)
        return h

    optimizer = ad.Adam(params, lr)
    for _ in range(epochs):
        perm = rng.permutation(len(train_idx))
        for start in range(0, len(perm), batch_size):
            idx = train_idx[perm[start:start + batch_size]]
            optimizer.zero_grad()
            with ad.Tape() as tape:
                loss = ad.cross_entropy(forward(features[idx]), labels[idx])
                tape.backward(loss)
            optimizer.step()

    logits = forward(features[test_idx]).data
    predicted = logits.argmax(axis=1)
    return float((predicted == labels[test_idx]).mean())


def probe_semantic_leakage(net: PolicyNetwork, scenes: list[SceneGrid], signatures,
                           cfg: AcousticConfig, n_samples: int = 3000,
                           seed: int = 0) -> float:
    features, labels = probe_features(net, scenes, signatures, cfg, n_samples, seed)
    return train_probe(features, labels, num_classes=len(HEARD_CATEGORIES), seed=seed + 1)


# --- exports -------------------------------------------------------------------


def export_trajectory(result: EpisodeResult, scene: SceneGrid, path,
                      cell_px: int = 24) -> None:
    """Standalone SVG: occupancy, start/goal markers, faded path, oracle path."""
    width = scene.width * cell_px
    height = scene.height * cell_px

    def cx(x):
        return (x + 0.5) * cell_px

    def cy(y):
        # svg y grows downward; grid y grows upward
        return (scene.height - y - 0.5) * cell_px

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    for y in range(scene.height):
        for x in range(scene.width):
            if scene.occupancy[y, x]:
                parts.append(f'<rect x="{x * cell_px}" y="{(scene.height - y - 1) * cell_px}" '
                             f'width="{cell_px}" height="{cell_px}" fill="#444444"/>')

    start = result.trajectory[0]
    goal = result.goal
    oracle = _oracle_cells(scene, start, goal)
    pts = " ".join(f"{cx(x)},{cy(y)}" for x, y in oracle)
    parts.append(f'<polyline points="{pts}" fill="none" stroke="#2ca02c" '
                 f'stroke-width="3" opacity="0.8"/>')

    pts = " ".join(f"{cx(p.x)},{cy(p.y)}" for p in result.trajectory)
    parts.append(f'<polyline id="agent-path" points="{pts}" fill="none" '
                 f'stroke="#9ecae1" stroke-width="2"/>')
    n_seg = len(result.trajectory) - 1
    for i in range(n_seg):
        a, b = result.trajectory[i], result.trajectory[i + 1]
        # stroke fades dark to light blue over time
        frac = i / max(n_seg - 1, 1)
        shade = tuple(int(s + frac * (e - s)) for s, e in ((8, 158), (48, 202), (107, 225)))
        parts.append(f'<line x1="{cx(a.x)}" y1="{cy(a.y)}" x2="{cx(b.x)}" y2="{cy(b.y)}" '
                     f'stroke="rgb{shade}" stroke-width="4" stroke-linecap="round"/>')

    parts.append(f'<circle cx="{cx(start.x)}" cy="{cy(start.y)}" r="{cell_px * 0.3}" '
                 f'fill="#ffd700" stroke="black"/>')
    parts.append(f'<circle cx="{cx(goal[0])}" cy="{cy(goal[1])}" r="{cell_px * 0.3}" '
                 f'fill="#d62728" stroke="black"/>')
    parts.append("</svg>")
    with open(path, "w", encoding="ascii") as f:
        f.write("\n".join(parts) + "\n")


def _oracle_cells(scene: SceneGrid, start: AgentPose, goal: tuple[int, int]):
    cells = [(start.x, start.y)]
    pose = start
    for action in oracle_actions(scene, start, goal):
        if action == Action.MOVE_FORWARD:
            from .gridworld import HEADING_VECTORS
            vx, vy = HEADING_VECTORS[pose.heading]
            pose = AgentPose(pose.x + vx, pose.y + vy, pose.heading)
            cells.append((pose.x, pose.y))
        elif action in (Action.TURN_LEFT, Action.TURN_RIGHT):
            pose = pose.turned(+1 if action == Action.TURN_LEFT else -1)
    return cells


def emit_learning_curve(log_paths: list[tuple[str, str]], metric: str, out_path) -> None:
    """Extract (env_steps, metric) series from training logs into one CSV.

    log_paths is a list of (label, csv path); multiple labels overlay runs
    for side-by-side comparison.
    """
    rows = []
    for label, path in log_paths:
        with open(path, "r", newline="", encoding="ascii") as f:
            reader = csv.DictReader(f)
            if reader.fieldnames is None or metric not in reader.fieldnames:
                raise ValueError(f"{path}: no column {metric!r}")
            for record in reader:
                rows.append((label, record["env_steps"], record[metric]))
    with open(out_path, "w", newline="", encoding="ascii") as f:
        writer = csv.writer(f)
        writer.writerow(["series", "env_steps", metric])
        writer.writerows(rows)


# --- line-delimited result serialization --------------------------------------
# "result <index> <category_id> <success> <path_length> <shortest_path>
#  <action_count> <min_action_count> <goal_x> <goal_y> <x,y,h;x,y,h;...>"


def results_to_text(results: list[EpisodeResult]) -> str:
    lines = []
    for i, r in enumerate(results):
        traj = ";".join(f"{p.x},{p.y},{p.heading}" for p in r.trajectory)
        lines.append(f"result {i} {r.category_id} {int(r.success)} "
                     f"{repr(r.path_length)} {repr(r.shortest_path)} "
                     f"{r.action_count} {r.min_action_count} "
                     f"{r.goal[0]} {r.goal[1]} {traj}")
    return "\n".join(lines) + ("\n" if lines else "")


def results_from_text(text: str) -> list[EpisodeResult]:
    results = []
    for line in text.splitlines():
        if not line.strip():
            continue
        parts = line.split()
        if parts[0] != "result" or len(parts) != 11:
            raise ValueError(f"malformed result record: {line!r}")
        trajectory = [AgentPose(*map(int, chunk.split(",")))
                      for chunk in parts[10].split(";")]
        results.append(EpisodeResult(
            success=bool(int(parts[3])), path_length=float(parts[4]),
            shortest_path=float(parts[5]), action_count=int(parts[6]),
            min_action_count=int(parts[7]), category_id=int(parts[2]),
            goal=(int(parts[8]), int(parts[9])), trajectory=trajectory))
    return results


def summaries_to_csv(summaries: dict[str, MetricsSummary], path) -> None:
    with open(path, "w", newline="", encoding="ascii") as f:
        writer = csv.writer(f)
        writer.writerow(["split", "SR", "SPL", "SNA", "n_episodes"])
        for split in sorted(summaries):
            s = summaries[split]
            writer.writerow([split, repr(s.sr), repr(s.spl), repr(s.sna), s.episode_count])
