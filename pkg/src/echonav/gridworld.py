"""Agent kinematics, rewards, episode generation, and observations.

The agent lives on the free cells of a SceneGrid with one of four headings
and a four-action repertoire. Episodes pair a start pose with a sound-source
cell; draws are rejected until the source is far enough away (geodesic at
least MIN_GEODESIC) and the shortest path is bent (geodesic over euclidean at
least MIN_DETOUR_RATIO), so trivial straight-line episodes never occur.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .scenes import SceneGrid, geodesic_distance

MAX_STEPS = 150
MIN_GEODESIC = 4.0
MIN_DETOUR_RATIO = 1.1
ELEVATION_CHOICES = (0.0, 1.0, 2.0)

SUCCESS_REWARD = 10.0
SHAPING_REWARD = 1.0
TIME_PENALTY = -0.01

DEFAULT_RAY_COUNT = 16
DEFAULT_FOV = math.pi / 2
DEFAULT_D_MAX = 10.0


class Action(IntEnum):
    MOVE_FORWARD = 0
    TURN_LEFT = 1
    TURN_RIGHT = 2
    STOP = 3


NUM_ACTIONS = len(Action)

# headings in counterclockwise order: +X, +Y, -X, -Y
HEADING_VECTORS = ((1, 0), (0, 1), (-1, 0), (0, -1))
HEADING_ANGLES = (0.0, math.pi / 2, math.pi, -math.pi / 2)


class EpisodeFinishedError(RuntimeError):
    """step() was called after the episode ended."""


class EpisodeGenerationError(RuntimeError):
    """No valid episode draw within the retry budget."""


@dataclass(frozen=True)
class AgentPose:
    x: int
    y: int
    heading: int  # index into HEADING_VECTORS

    def turned(self, direction: int) -> "AgentPose":
        return AgentPose(self.x, self.y, (self.heading + direction) % 4)


@dataclass(frozen=True)
class Episode:
    scene_id: int
    start: AgentPose
    source_x: int
    source_y: int
    source_elevation: float
    category_id: int
    max_steps: int = MAX_STEPS

    @property
    def source(self) -> tuple[int, int]:
        return (self.source_x, self.source_y)


@dataclass
class ObservationBundle:
    depth: np.ndarray          # (R,) float32, values in [0, d_max]
    audio: "BinauralSpectrogram"
    prev_action: Action | None  # None before the first action

    def prev_action_onehot(self) -> np.ndarray:
        onehot = np.zeros(NUM_ACTIONS, dtype=np.float32)
        if self.prev_action is not None:
            onehot[self.prev_action] = 1.0
        return onehot


@dataclass
class StepResult:
    observation: "ObservationBundle | None"
    reward: float
    done: bool
    info: dict


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    a = math.fmod(a + math.pi, 2.0 * math.pi)
    if a <= 0.0:
        a += 2.0 * math.pi
    return a - math.pi


def relative_angles(pose: AgentPose, episode: Episode) -> tuple[float, float]:
    """Yaw and pitch of the source in the agent's heading frame.

    Yaw is the straight-line bearing, positive counterclockwise (left), in
    (-pi, pi]. Pitch satisfies tan(pitch) = elevation / horizontal distance,
    in [0, pi/2). At the source cell the direction is undefined and both
    angles are fixed to 0; downstream losses mask those steps.
    """
    dx = episode.source_x - pose.x
    dy = episode.source_y - pose.y
    if dx == 0 and dy == 0:
        return 0.0, 0.0
    yaw = wrap_angle(math.atan2(dy, dx) - HEADING_ANGLES[pose.heading])
    horizontal = math.hypot(dx, dy)
    pitch = math.atan2(episode.source_elevation, horizontal)
    return yaw, pitch


def step(scene: SceneGrid, episode: Episode, pose: AgentPose, step_index: int,
         action: Action) -> tuple[AgentPose, StepResult]:
    """Advance one action; returns the new pose and the bare step outcome.

    The observation field of the result is left unfilled; the environment
    wrapper composes it. Reward is shaping (+1 geodesic decrease, -1
    increase) plus time penalty plus the success bonus for Stop at the
    source cell. Done on Stop or when the step budget is spent.
    """
    if step_index >= episode.max_steps:
        raise EpisodeFinishedError(f"step {step_index} beyond budget {episode.max_steps}")
    field = scene.distance_field(episode.source)
    dist_before = float(field[pose.y, pose.x])
    new_pose = pose
    if action == Action.MOVE_FORWARD:
        vx, vy = HEADING_VECTORS[pose.heading]
        if scene.is_free(pose.x + vx, pose.y + vy):
            new_pose = AgentPose(pose.x + vx, pose.y + vy, pose.heading)
    elif action == Action.TURN_LEFT:
        new_pose = pose.turned(+1)
    elif action == Action.TURN_RIGHT:
        new_pose = pose.turned(-1)
    dist_after = float(field[new_pose.y, new_pose.x])
    if not (math.isfinite(dist_before) and math.isfinite(dist_after)):
        raise ValueError("agent on a cell unreachable from the source")

    at_source = (new_pose.x, new_pose.y) == episode.source
    success = action == Action.STOP and at_source
    reward = TIME_PENALTY
    if dist_after < dist_before:
        reward += SHAPING_REWARD
    elif dist_after > dist_before:
        reward -= SHAPING_REWARD
    if success:
        reward += SUCCESS_REWARD
    done = action == Action.STOP or step_index + 1 >= episode.max_steps
    info = {"geodesic_to_source": dist_after, "success": success}
    return new_pose, StepResult(None, reward, done, info)


def depth_render(scene: SceneGrid, pose: AgentPose, ray_count: int = DEFAULT_RAY_COUNT,
                 fov: float = DEFAULT_FOV, d_max: float = DEFAULT_D_MAX) -> np.ndarray:
    """Ray-cast distances to the nearest blocked cell, one per ray.

    Rays fan evenly across fov centered on the heading, cast from the cell
    center. Reported values are the center-to-boundary distance plus half a
    cell, so a wall in the adjacent cell reads exactly 1.0; everything is
    clipped to d_max.
    """
    if ray_count < 3:
        raise ValueError("need at least 3 rays")
    base = HEADING_ANGLES[pose.heading]
    angles = base + np.linspace(-fov / 2.0, fov / 2.0, ray_count)
    out = np.empty(ray_count, dtype=np.float32)
    for i, ang in enumerate(angles):
        out[i] = min(_cast_ray(scene, pose.x + 0.5, pose.y + 0.5, ang) + 0.5, d_max)
    return out


def _cast_ray(scene: SceneGrid, ox: float, oy: float, angle: float) -> float:
    """Distance from (ox, oy) to the boundary of the first blocked cell."""
    dx = math.cos(angle)
    dy = math.sin(angle)
    x, y = int(ox), int(oy)
    step_x = 1 if dx > 0 else -1
    step_y = 1 if dy > 0 else -1
    # parametric distance to the next vertical / horizontal grid line
    t_max_x = ((x + (step_x > 0)) - ox) / dx if dx != 0 else math.inf
    t_max_y = ((y + (step_y > 0)) - oy) / dy if dy != 0 else math.inf
    t_delta_x = abs(1.0 / dx) if dx != 0 else math.inf
    t_delta_y = abs(1.0 / dy) if dy != 0 else math.inf
    corner_eps = 1e-9
    while True:
        # crossings closer than corner_eps count as one corner contact: the
        # ray steps diagonally and only the destination cell can block it
        if abs(t_max_x - t_max_y) < corner_eps:
            t = t_max_x
            t_max_x += t_delta_x
            t_max_y += t_delta_y
            x += step_x
            y += step_y
        elif t_max_x < t_max_y:
            t = t_max_x
            t_max_x += t_delta_x
            x += step_x
        else:
            t = t_max_y
            t_max_y += t_delta_y
            y += step_y
        if not (0 <= x < scene.width and 0 <= y < scene.height):
            return t  # border is blocked, so this is unreachable in valid scenes
        if scene.occupancy[y, x]:
            return t


def euclidean_distance(a: tuple[int, int], b: tuple[int, int]) -> float:
    return math.hypot(b[0] - a[0], b[1] - a[1])


def episode_is_valid(scene: SceneGrid, episode: Episode) -> bool:
    """Re-check every episode invariant from scratch."""
    start_cell = (episode.start.x, episode.start.y)
    if not scene.is_free(*start_cell) or not scene.is_free(*episode.source):
        return False
    if start_cell == episode.source:
        return False
    geo = geodesic_distance(scene, start_cell, episode.source)
    if geo < MIN_GEODESIC:
        return False
    if geo / euclidean_distance(start_cell, episode.source) < MIN_DETOUR_RATIO:
        return False
    return episode.source_elevation >= 0.0


def generate_episodes(scene: SceneGrid, count: int, rng_seed: int,
                      categories: list[int], max_draws_per_episode: int = 2000) -> list[Episode]:
    """Rejection-sample valid episodes, deterministic in rng_seed.

    categories is the pool the episode sounds are drawn from (the heard set
    for training scenes, the full set for evaluation scenes).
    """
    if not categories:
        raise ValueError("category pool is empty")
    rng = np.random.Generator(np.random.PCG64([rng_seed, scene.scene_id]))
    free = scene.free_cells()
    episodes: list[Episode] = []
    for _ in range(count):
        for attempt in range(max_draws_per_episode):
            si, gi = rng.integers(len(free), size=2)
            heading = int(rng.integers(4))
            start = AgentPose(*free[si], heading)
            source = free[gi]
            category = int(categories[rng.integers(len(categories))])
            elevation = float(ELEVATION_CHOICES[rng.integers(len(ELEVATION_CHOICES))])
            episode = Episode(scene_id=scene.scene_id, start=start,
                              source_x=source[0], source_y=source[1],
                              source_elevation=elevation, category_id=category)
            if episode_is_valid(scene, episode):
                episodes.append(episode)
                break
        else:
            raise EpisodeGenerationError(
                f"scene {scene.scene_id} too small for valid episodes "
                f"(gave up after {max_draws_per_episode} draws)")
    return episodes


# --- line-delimited serialization --------------------------------------------
# one record per episode:
# "episode <scene_id> <start_x> <start_y> <heading> <source_x> <source_y>
#  <elevation> <category_id> <max_steps>"


def episodes_to_text(episodes: list[Episode]) -> str:
    lines = []
    for e in episodes:
        lines.append("episode {} {} {} {} {} {} {} {} {}".format(
            e.scene_id, e.start.x, e.start.y, e.start.heading,
            e.source_x, e.source_y, repr(e.source_elevation),
            e.category_id, e.max_steps))
    return "\n".join(lines) + ("\n" if lines else "")


def episodes_from_text(text: str) -> list[Episode]:
    episodes = []
    for line in text.splitlines():
        if not line.strip():
            continue
        parts = line.split()
        if parts[0] != "episode" or len(parts) != 10:
            raise ValueError(f"malformed episode record: {line!r}")
        episodes.append(Episode(
            scene_id=int(parts[1]),
            start=AgentPose(int(parts[2]), int(parts[3]), int(parts[4])),
            source_x=int(parts[5]), source_y=int(parts[6]),
            source_elevation=float(parts[7]),
            category_id=int(parts[8]), max_steps=int(parts[9])))
    return episodes


def save_episodes(path, episodes: list[Episode]) -> None:
    with open(path, "w", encoding="ascii") as f:
        f.write(episodes_to_text(episodes))


def load_episodes(path) -> list[Episode]:
    with open(path, "r", encoding="ascii") as f:
        return episodes_from_text(f.read())


class NavEnv:
    """Stateful episode runner tying scenes, acoustics, and kinematics together.

    Holds no state shared with other instances; step one instance from one
    caller at a time. Observation noise draws come from the rng passed at
    construction (None disables noise entirely).
    """

    def __init__(self, scenes_by_id: dict[int, SceneGrid], episodes: list[Episode],
                 signatures, acoustic_cfg, ray_count: int = DEFAULT_RAY_COUNT,
                 fov: float = DEFAULT_FOV, d_max: float = DEFAULT_D_MAX,
                 depth_noise_std: float = 0.0, noise_rng: np.random.Generator | None = None,
                 episode_offset: int = 0, episode_stride: int = 1):
        from .acoustics import render  # local to avoid an import cycle

        self._render = render
        self.scenes_by_id = scenes_by_id
        self.episodes = episodes
        self.signatures = signatures
        self.cfg = acoustic_cfg
        self.ray_count = ray_count
        self.fov = fov
        self.d_max = d_max
        self.depth_noise_std = depth_noise_std
        self.noise_rng = noise_rng
        self._cursor = episode_offset % len(episodes)
        self._stride = episode_stride
        self._depth_cache: dict[tuple[int, int, int, int], np.ndarray] = {}
        self.scene: SceneGrid | None = None
        self.episode: Episode | None = None
        self.pose: AgentPose | None = None
        self.step_index = 0
        self.done = True

    def reset(self) -> ObservationBundle:
        """Start the next episode in the rotation."""
        self.episode = self.episodes[self._cursor]
        self._cursor = (self._cursor + self._stride) % len(self.episodes)
        self.scene = self.scenes_by_id[self.episode.scene_id]
        self.pose = self.episode.start
        self.step_index = 0
        self.done = False
        return self._observe(prev_action=None)

    def step(self, action: Action) -> StepResult:
        if self.done:
            raise EpisodeFinishedError("episode is finished; call reset()")
        self.pose, result = step(self.scene, self.episode, self.pose,
                                 self.step_index, action)
        self.step_index += 1
        self.done = result.done
        if not self.done:
            result.observation = self._observe(prev_action=action)
        return result

    def at_source(self) -> bool:
        return (self.pose.x, self.pose.y) == self.episode.source

    def ground_truth_angles(self) -> tuple[float, float]:
        return relative_angles(self.pose, self.episode)

    def _observe(self, prev_action: Action | None) -> ObservationBundle:
        from .acoustics import add_depth_noise, add_noise

        key = (self.episode.scene_id, self.pose.x, self.pose.y, self.pose.heading)
        depth = self._depth_cache.get(key)
        if depth is None:
            depth = depth_render(self.scene, self.pose, self.ray_count, self.fov, self.d_max)
            self._depth_cache[key] = depth
        if self.depth_noise_std > 0.0 and self.noise_rng is not None:
            depth = add_depth_noise(depth, self.depth_noise_std, self.noise_rng, self.d_max)
        yaw, pitch = relative_angles(self.pose, self.episode)
        dist = float(self.scene.distance_field(self.episode.source)[self.pose.y, self.pose.x])
        audio = self._render(self.signatures[self.episode.category_id], dist,
                             yaw, pitch, self.cfg)
        if self.cfg.noise_snr_db is not None and self.noise_rng is not None:
            audio = add_noise(audio, self.cfg.noise_snr_db, self.noise_rng)
        return ObservationBundle(depth=depth, audio=audio, prev_action=prev_action)
