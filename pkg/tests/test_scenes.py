import itertools

import numpy as np
import pytest

from echonav.scenes import (SceneGrid, UnreachableCellError, flood_fill_count,
                            generate_scene, geodesic_distance, load_scenes,
                            save_scenes, scenes_from_text, scenes_to_text)


def bfs_oracle(occupancy, start, goal):
    """Independent breadth-first search over free cells; None if unreachable."""
    h, w = occupancy.shape
    frontier = [start]
    dist = {start: 0}
    while frontier:
        nxt = []
        for x, y in frontier:
            for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                nx, ny = x + dx, y + dy
                if 0 <= nx < w and 0 <= ny < h and not occupancy[ny, nx] \
                        and (nx, ny) not in dist:
                    dist[(nx, ny)] = dist[(x, y)] + 1
                    nxt.append((nx, ny))
        frontier = nxt
    return dist.get(goal)


class TestGeneration:
    def test_single_room_is_open_interior(self):
        scene = generate_scene(7, 10, 10, 1)
        assert not scene.occupancy[1:-1, 1:-1].any()
        assert scene.occupancy[0, :].all() and scene.occupancy[-1, :].all()
        assert scene.occupancy[:, 0].all() and scene.occupancy[:, -1].all()

    def test_determinism(self):
        a = generate_scene(7, 16, 16, 3)
        b = generate_scene(7, 16, 16, 3)
        assert np.array_equal(a.occupancy, b.occupancy)

    def test_multiroom_connected_by_flood_fill(self):
        scene = generate_scene(3, 16, 16, 3)
        free = int((~scene.occupancy).sum())
        assert flood_fill_count(scene.occupancy) == free
        # has interior walls
        assert scene.occupancy[1:-1, 1:-1].any()

    def test_many_seeds_all_valid(self):
        for seed in range(25):
            scene = generate_scene(seed, 12, 14, 3)
            scene.validate()

    def test_too_small_rejected(self):
        with pytest.raises(ValueError):
            generate_scene(0, 7, 10, 1)

    def test_bad_room_count_rejected(self):
        with pytest.raises(ValueError):
            generate_scene(0, 10, 10, 0)


class TestGeodesic:
    def test_open_grid_manhattan(self, open_scene):
        assert geodesic_distance(open_scene, (1, 1), (3, 3)) == 4.0

    def test_identity(self, open_scene):
        assert geodesic_distance(open_scene, (2, 2), (2, 2)) == 0.0

    def test_wall_with_door_matches_bfs_oracle(self):
        occ = np.zeros((8, 8), dtype=bool)
        occ[0, :] = occ[-1, :] = True
        occ[:, 0] = occ[:, -1] = True
        occ[1:-1, 4] = True
        occ[5, 4] = False  # single door
        scene = SceneGrid(width=8, height=8, occupancy=occ, scene_id=9, split="train")
        scene.validate()
        for a, b in [((1, 1), (6, 1)), ((2, 3), (6, 6)), ((1, 6), (5, 1))]:
            expected = bfs_oracle(occ, a, b)
            assert geodesic_distance(scene, a, b) == float(expected)

    def test_blocked_cell_rejected(self, open_scene):
        with pytest.raises(ValueError):
            geodesic_distance(open_scene, (0, 0), (2, 2))

    def test_unreachable_raises(self):
        occ = np.ones((8, 8), dtype=bool)
        occ[1, 1] = occ[3, 3] = False
        scene = SceneGrid(width=8, height=8, occupancy=occ, scene_id=9, split="train")
        with pytest.raises(UnreachableCellError):
            geodesic_distance(scene, (1, 1), (3, 3))

    def test_metric_properties_exhaustive(self):
        # symmetry, identity, triangle inequality on every free-cell pair
        scene = generate_scene(11, 12, 12, 2)
        free = scene.free_cells()
        dist = {}
        for a in free:
            field = scene.distance_field(a)
            for b in free:
                dist[(a, b)] = field[b[1], b[0]]
        for a, b in itertools.product(free, repeat=2):
            assert dist[(a, b)] == dist[(b, a)]
            assert (dist[(a, b)] == 0.0) == (a == b)
        rng = np.random.Generator(np.random.PCG64(5))
        idx = rng.integers(len(free), size=(400, 3))
        for i, j, k in idx:
            a, b, c = free[i], free[j], free[k]
            assert dist[(a, c)] <= dist[(a, b)] + dist[(b, c)] + 1e-9


class TestSerialization:
    def test_round_trip_lossless(self, tmp_path):
        scenes = [generate_scene(s, 10 + s % 3, 12, 2, scene_id=s,
                                 split="train" if s % 2 else "test")
                  for s in range(4)]
        path = tmp_path / "scenes.txt"
        save_scenes(path, scenes)
        loaded = load_scenes(path)
        assert len(loaded) == len(scenes)
        for a, b in zip(scenes, loaded):
            assert np.array_equal(a.occupancy, b.occupancy)
            assert (a.width, a.height, a.scene_id, a.split, a.seed) == \
                   (b.width, b.height, b.scene_id, b.split, b.seed)
        # text is stable
        assert scenes_to_text(loaded) == scenes_to_text(scenes)

    def test_malformed_header_rejected(self):
        with pytest.raises(ValueError):
            scenes_from_text("scene 0 4 4 1\n####\n####\n####\n####\n")

    def test_bad_rows_rejected(self):
        text = "scene 0 4 4 1 train\n####\n#..#\n####\n"
        with pytest.raises(ValueError):
            scenes_from_text(text)
