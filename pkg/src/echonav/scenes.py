"""Procedural gridworld scenes and shortest-path geometry.

A scene is a boolean occupancy grid (True = blocked) with a blocked border
and a single 4-connected component of free cells. Rooms are carved by
splitting the interior with straight walls, each pierced by a door gap;
every candidate wall is accepted only if the free space stays connected.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

SPACING = 1.0  # length-units per cell, fixed

SPLITS = ("train", "test")


class SceneGenerationError(RuntimeError):
    """Connected layout could not be produced within the retry budget."""


class UnreachableCellError(ValueError):
    """Geodesic query between cells in different components."""


@dataclass(eq=False)
class SceneGrid:
    """Occupancy grid defining the navigability graph."""

    width: int
    height: int
    occupancy: np.ndarray  # bool, shape (height, width), indexed [y, x]
    scene_id: int
    split: str
    seed: int = 0
    _fields: dict = field(default_factory=dict, repr=False, compare=False)

    def is_free(self, x: int, y: int) -> bool:
        return (0 <= x < self.width and 0 <= y < self.height
                and not self.occupancy[y, x])

    def free_cells(self) -> list[tuple[int, int]]:
        ys, xs = np.nonzero(~self.occupancy)
        return list(zip(xs.tolist(), ys.tolist()))

    def validate(self) -> None:
        if self.occupancy.shape != (self.height, self.width):
            raise ValueError("occupancy shape does not match dimensions")
        border = np.concatenate([
            self.occupancy[0, :], self.occupancy[-1, :],
            self.occupancy[:, 0], self.occupancy[:, -1]])
        if not border.all():
            raise ValueError("boundary cells must be blocked")
        free = ~self.occupancy
        n_free = int(free.sum())
        if n_free == 0:
            raise ValueError("scene has no free cells")
        if flood_fill_count(self.occupancy) != n_free:
            raise ValueError("free space is not 4-connected")

    def distance_field(self, source: tuple[int, int]) -> np.ndarray:
        """Geodesic distance (length-units) from source to every free cell.

        Blocked or unreachable cells hold +inf. Cached per source.
        """
        cached = self._fields.get(source)
        if cached is not None:
            return cached
        sx, sy = source
        if not self.is_free(sx, sy):
            raise ValueError(f"source cell {source} is not free")
        dist = np.full((self.height, self.width), np.inf)
        dist[sy, sx] = 0.0
        queue = deque([(sx, sy)])
        occ = self.occupancy
        while queue:
            x, y = queue.popleft()
            d = dist[y, x] + SPACING
            for nx, ny in ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)):
                if not occ[ny, nx] and d < dist[ny, nx]:
                    dist[ny, nx] = d
                    queue.append((nx, ny))
        self._fields[source] = dist
        return dist


def flood_fill_count(occupancy: np.ndarray) -> int:
    """Size of the free component containing the first free cell."""
    free = ~occupancy
    ys, xs = np.nonzero(free)
    if len(xs) == 0:
        return 0
    seen = np.zeros_like(free)
    queue = deque([(int(xs[0]), int(ys[0]))])
    seen[ys[0], xs[0]] = True
    count = 0
    h, w = occupancy.shape
    while queue:
        x, y = queue.popleft()
        count += 1
        for nx, ny in ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)):
            if 0 <= nx < w and 0 <= ny < h and free[ny, nx] and not seen[ny, nx]:
                seen[ny, nx] = True
                queue.append((nx, ny))
    return count


def geodesic_distance(scene: SceneGrid, a: tuple[int, int], b: tuple[int, int]) -> float:
    """Shortest 4-connected path length between free cells, in length-units."""
    for cell in (a, b):
        if not scene.is_free(*cell):
            raise ValueError(f"cell {cell} is not free")
    d = scene.distance_field(a)[b[1], b[0]]
    if not np.isfinite(d):
        raise UnreachableCellError(f"no path between {a} and {b}")
    return float(d)


def generate_scene(scene_seed: int, width: int, height: int, room_count: int,
                   scene_id: int = 0, split: str = "train") -> SceneGrid:
    """Carve a connected multi-room layout, deterministic in scene_seed.

    Walls with door gaps are added one at a time; a candidate that would
    disconnect the free space is discarded. Raises SceneGenerationError
    (naming the seed) if no valid layout emerges within the retry budget.
    """
    if width < 8 or height < 8:
        raise ValueError("scene must be at least 8x8")
    if room_count < 1:
        raise ValueError("room_count must be >= 1")
    if split not in SPLITS:
        raise ValueError(f"split must be one of {SPLITS}")
    rng = np.random.Generator(np.random.PCG64([scene_seed, width, height, room_count]))

    occ = np.zeros((height, width), dtype=bool)
    occ[0, :] = occ[-1, :] = True
    occ[:, 0] = occ[:, -1] = True

    walls_needed = room_count - 1
    placed = 0
    attempts = 0
    max_attempts = 40 * max(1, walls_needed)
    n_free = int((~occ).sum())
    while placed < walls_needed:
        attempts += 1
        if attempts > max_attempts:
            raise SceneGenerationError(
                f"could not carve {room_count} connected rooms with seed {scene_seed}")
        horizontal = bool(rng.integers(2))
        candidate = occ.copy()
        if horizontal:
            y = int(rng.integers(2, height - 2))
            xs = np.arange(1, width - 1)
            candidate[y, xs] = True
            door = int(rng.integers(1, width - 1))
            candidate[y, door] = False
        else:
            x = int(rng.integers(2, width - 2))
            ys = np.arange(1, height - 1)
            candidate[ys, x] = True
            door = int(rng.integers(1, height - 1))
            candidate[door, x] = False
        free_count = int((~candidate).sum())
        # reject walls that erase too much area or break connectivity
        if free_count < n_free // (room_count + 1):
            continue
        if flood_fill_count(candidate) != free_count:
            continue
        occ = candidate
        placed += 1

    scene = SceneGrid(width=width, height=height, occupancy=occ,
                      scene_id=scene_id, split=split, seed=scene_seed)
    scene.validate()
    return scene


# --- line-delimited serialization -------------------------------------------
# scene header: "scene <scene_id> <width> <height> <seed> <split>"
# followed by <height> occupancy rows, '#' blocked / '.' free, row y=0 first


def scenes_to_text(scenes: list[SceneGrid]) -> str:
    lines = []
    for s in scenes:
        lines.append(f"scene {s.scene_id} {s.width} {s.height} {s.seed} {s.split}")
        for y in range(s.height):
            lines.append("".join("#" if s.occupancy[y, x] else "." for x in range(s.width)))
    return "\n".join(lines) + "\n"


def scenes_from_text(text: str) -> list[SceneGrid]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    scenes = []
    i = 0
    while i < len(lines):
        parts = lines[i].split()
        if parts[0] != "scene" or len(parts) != 6:
            raise ValueError(f"malformed scene header: {lines[i]!r}")
        scene_id, width, height, seed = map(int, parts[1:5])
        split = parts[5]
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}")
        rows = lines[i + 1:i + 1 + height]
        if len(rows) != height or any(len(r) != width for r in rows):
            raise ValueError(f"scene {scene_id}: occupancy block does not match header")
        occ = np.array([[c == "#" for c in row] for row in rows], dtype=bool)
        scene = SceneGrid(width=width, height=height, occupancy=occ,
                          scene_id=scene_id, split=split, seed=seed)
        scene.validate()
        scenes.append(scene)
        i += 1 + height
    return scenes


def save_scenes(path, scenes: list[SceneGrid]) -> None:
    with open(path, "w", encoding="ascii") as f:
        f.write(scenes_to_text(scenes))


def load_scenes(path) -> list[SceneGrid]:
    with open(path, "r", encoding="ascii") as f:
        return scenes_from_text(f.read())
