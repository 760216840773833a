import math

import numpy as np
import pytest

from echonav.acoustics import HEARD_CATEGORIES
from echonav.gridworld import (Action, AgentPose, Episode, EpisodeFinishedError,
                               EpisodeGenerationError, NavEnv, depth_render,
                               episode_is_valid, episodes_from_text,
                               episodes_to_text, generate_episodes,
                               load_episodes, relative_angles, save_episodes,
                               step, wrap_angle)
from echonav.scenes import SceneGrid, generate_scene, geodesic_distance


def make_episode(scene, start, source, elevation=0.0, category=0):
    return Episode(scene_id=scene.scene_id, start=start, source_x=source[0],
                   source_y=source[1], source_elevation=elevation,
                   category_id=category)


class TestStep:
    def test_stop_at_source(self, open_scene):
        # geodesic from (1,1) to (5,1) is 4.0, ratio fine for the reward test
        episode = make_episode(open_scene, AgentPose(5, 1, 0), (5, 1))
        pose, result = step(open_scene, episode, AgentPose(5, 1, 0), 0, Action.STOP)
        assert result.reward == pytest.approx(9.99)
        assert result.done and result.info["success"]
        assert pose == AgentPose(5, 1, 0)

    def test_stop_away_from_source_no_bonus(self, open_scene):
        episode = make_episode(open_scene, AgentPose(1, 1, 0), (6, 5))
        _, result = step(open_scene, episode, AgentPose(1, 1, 0), 0, Action.STOP)
        assert result.reward == pytest.approx(-0.01)
        assert result.done and not result.info["success"]

    def test_turn_has_time_penalty_only(self, open_scene):
        episode = make_episode(open_scene, AgentPose(1, 1, 0), (6, 5))
        pose, result = step(open_scene, episode, AgentPose(3, 3, 0), 5, Action.TURN_LEFT)
        assert result.reward == pytest.approx(-0.01)
        assert pose == AgentPose(3, 3, 1)
        assert not result.done

    def test_turns_compose_to_identity(self, open_scene):
        pose = AgentPose(3, 3, 0)
        for _ in range(4):
            pose = pose.turned(+1)
        assert pose == AgentPose(3, 3, 0)

    def test_move_into_wall_keeps_pose(self, open_scene):
        episode = make_episode(open_scene, AgentPose(1, 1, 0), (6, 5))
        # heading -X at x=1 faces the border wall
        before = AgentPose(1, 4, 2)
        d0 = geodesic_distance(open_scene, (1, 4), (6, 5))
        pose, result = step(open_scene, episode, before, 0, Action.MOVE_FORWARD)
        assert pose == before
        assert result.reward == pytest.approx(-0.01)
        assert geodesic_distance(open_scene, (pose.x, pose.y), (6, 5)) == d0

    def test_shaping_signs(self, open_scene):
        episode = make_episode(open_scene, AgentPose(1, 1, 0), (6, 1))
        # moving toward the source
        _, closer = step(open_scene, episode, AgentPose(1, 1, 0), 0, Action.MOVE_FORWARD)
        assert closer.reward == pytest.approx(1.0 - 0.01)
        # moving away (heading -X from x=3)
        _, farther = step(open_scene, episode, AgentPose(3, 1, 2), 0, Action.MOVE_FORWARD)
        assert farther.reward == pytest.approx(-1.0 - 0.01)

    def test_budget_exhaustion_sets_done(self, open_scene):
        episode = make_episode(open_scene, AgentPose(1, 1, 0), (6, 5))
        _, result = step(open_scene, episode, AgentPose(1, 1, 0), 149, Action.TURN_LEFT)
        assert result.done and not result.info["success"]

    def test_step_after_budget_raises(self, open_scene):
        episode = make_episode(open_scene, AgentPose(1, 1, 0), (6, 5))
        with pytest.raises(EpisodeFinishedError):
            step(open_scene, episode, AgentPose(1, 1, 0), 150, Action.TURN_LEFT)

    def test_shaping_telescopes_along_any_walk(self, open_scene, rng):
        # sum of shaping terms equals initial minus final geodesic
        episode = make_episode(open_scene, AgentPose(1, 1, 0), (7, 7))
        pose = episode.start
        total_shaping = 0.0
        d_init = geodesic_distance(open_scene, (pose.x, pose.y), episode.source)
        for i in range(60):
            action = Action(int(rng.integers(3)))  # never Stop
            new_pose, result = step(open_scene, episode, pose, i, action)
            total_shaping += result.reward + 0.01
            pose = new_pose
        d_final = geodesic_distance(open_scene, (pose.x, pose.y), episode.source)
        assert total_shaping == pytest.approx(d_init - d_final)


class TestRelativeAngles:
    def test_source_straight_ahead(self, open_scene):
        episode = make_episode(open_scene, AgentPose(1, 1, 0), (5, 1))
        yaw, pitch = relative_angles(AgentPose(1, 1, 0), episode)
        assert yaw == pytest.approx(0.0)
        assert pitch == pytest.approx(0.0)

    def test_source_directly_left(self, open_scene):
        # heading +X, source along +Y
        episode = make_episode(open_scene, AgentPose(4, 1, 0), (4, 6))
        yaw, pitch = relative_angles(AgentPose(4, 1, 0), episode)
        assert yaw == pytest.approx(math.pi / 2)

    def test_source_directly_right(self, open_scene):
        episode = make_episode(open_scene, AgentPose(4, 6, 0), (4, 1))
        yaw, _ = relative_angles(AgentPose(4, 6, 0), episode)
        assert yaw == pytest.approx(-math.pi / 2)

    def test_pitch_forty_five_degrees(self, open_scene):
        episode = make_episode(open_scene, AgentPose(1, 1, 0), (4, 1), elevation=3.0)
        _, pitch = relative_angles(AgentPose(1, 1, 0), episode)
        assert pitch == pytest.approx(math.pi / 4)

    def test_at_source_degenerate(self, open_scene):
        episode = make_episode(open_scene, AgentPose(1, 1, 0), (3, 3), elevation=2.0)
        assert relative_angles(AgentPose(3, 3, 2), episode) == (0.0, 0.0)

    def test_heading_frame_consistency(self, open_scene):
        # turning the agent left shifts the bearing right by 90 degrees
        episode = make_episode(open_scene, AgentPose(2, 2, 0), (6, 5))
        for heading in range(4):
            yaw0, _ = relative_angles(AgentPose(2, 2, heading), episode)
            yaw1, _ = relative_angles(AgentPose(2, 2, (heading + 1) % 4), episode)
            assert wrap_angle(yaw1 - (yaw0 - math.pi / 2)) == pytest.approx(0.0, abs=1e-9)


def marching_oracle(scene, pose, ray_count, fov, d_max, step_size=1e-3):
    """Brute-force ray marching at a fine step, same reporting convention."""
    from echonav.gridworld import HEADING_ANGLES

    base = HEADING_ANGLES[pose.heading]
    angles = base + np.linspace(-fov / 2, fov / 2, ray_count)
    out = []
    for ang in angles:
        ox, oy = pose.x + 0.5, pose.y + 0.5
        dx, dy = math.cos(ang), math.sin(ang)
        t = step_size
        hit = d_max
        while t < d_max + 1.0:
            x, y = int(ox + t * dx), int(oy + t * dy)
            if not (0 <= x < scene.width and 0 <= y < scene.height) or scene.occupancy[y, x]:
                # bisect the crossing for a sharp boundary distance
                lo, hi = t - step_size, t
                for _ in range(40):
                    mid = (lo + hi) / 2
                    mx, my = int(ox + mid * dx), int(oy + mid * dy)
                    blocked = not (0 <= mx < scene.width and 0 <= my < scene.height) \
                        or scene.occupancy[my, mx]
                    if blocked:
                        hi = mid
                    else:
                        lo = mid
                hit = hi
                break
            t += step_size
        out.append(min(hit + 0.5, d_max))
    return np.array(out, dtype=np.float32)


class TestDepthRender:
    def test_wall_one_cell_ahead_reads_one(self):
        occ = np.zeros((8, 8), dtype=bool)
        occ[0, :] = occ[-1, :] = True
        occ[:, 0] = occ[:, -1] = True
        occ[3, 4] = True
        scene = SceneGrid(width=8, height=8, occupancy=occ, scene_id=0, split="train")
        depth = depth_render(scene, AgentPose(3, 3, 0), ray_count=9, fov=math.pi / 2)
        assert depth[4] == pytest.approx(1.0)  # center ray hits (4,3)

    def test_open_corridor_clips_to_d_max(self, open_scene):
        depth = depth_render(open_scene, AgentPose(1, 4, 0), ray_count=9,
                             fov=math.pi / 3, d_max=5.0)
        assert depth[4] == pytest.approx(5.0)
        assert np.all(depth <= 5.0) and np.all(depth >= 0.0)

    def test_requires_three_rays(self, open_scene):
        with pytest.raises(ValueError):
            depth_render(open_scene, AgentPose(1, 1, 0), ray_count=2)

    def test_matches_marching_oracle(self, small_scene):
        poses = [AgentPose(x, y, h)
                 for (x, y) in small_scene.free_cells()[::7] for h in range(4)]
        for pose in poses:
            fast = depth_render(small_scene, pose, ray_count=16,
                                fov=math.pi / 2, d_max=10.0)
            slow = marching_oracle(small_scene, pose, 16, math.pi / 2, 10.0)
            np.testing.assert_allclose(fast, slow, atol=2e-3)

    def test_deterministic(self, small_scene):
        a = depth_render(small_scene, AgentPose(2, 2, 1))
        b = depth_render(small_scene, AgentPose(2, 2, 1))
        assert np.array_equal(a, b)


class TestEpisodeGeneration:
    def test_filters_hold_on_every_episode(self):
        scene = generate_scene(3, 16, 16, 3)
        episodes = generate_episodes(scene, 100, rng_seed=5,
                                     categories=list(HEARD_CATEGORIES))
        assert len(episodes) == 100
        for e in episodes:
            # independent re-check against the geodesic oracle
            start = (e.start.x, e.start.y)
            geo = geodesic_distance(scene, start, e.source)
            euclid = math.hypot(e.source_x - e.start.x, e.source_y - e.start.y)
            assert geo >= 4.0
            assert geo / euclid >= 1.1
            assert start != e.source
            assert scene.is_free(*e.source)
            assert e.source_elevation in (0.0, 1.0, 2.0)
            assert e.category_id in HEARD_CATEGORIES
            assert e.max_steps == 150

    def test_short_geodesic_rejected(self, open_scene):
        episode = make_episode(open_scene, AgentPose(1, 1, 0), (1, 4))
        assert geodesic_distance(open_scene, (1, 1), (1, 4)) == pytest.approx(3.0)
        assert not episode_is_valid(open_scene, episode)

    def test_straight_line_rejected(self, open_scene):
        # ratio exactly 1.0 along a clear corridor
        episode = make_episode(open_scene, AgentPose(1, 1, 0), (6, 1))
        assert not episode_is_valid(open_scene, episode)

    def test_determinism(self):
        scene = generate_scene(3, 16, 16, 3)
        a = generate_episodes(scene, 20, rng_seed=9, categories=[0, 1])
        b = generate_episodes(scene, 20, rng_seed=9, categories=[0, 1])
        assert a == b

    def test_impossible_scene_raises(self):
        # free cells form a tight plus; every pair is nearly straight
        occ = np.ones((8, 8), dtype=bool)
        for x, y in [(3, 3), (4, 3), (3, 4), (2, 3), (3, 2)]:
            occ[y, x] = False
        scene = SceneGrid(width=8, height=8, occupancy=occ, scene_id=4, split="train")
        with pytest.raises(EpisodeGenerationError):
            generate_episodes(scene, 5, rng_seed=1, categories=[0],
                              max_draws_per_episode=200)


class TestEpisodeSerialization:
    def test_round_trip(self, tmp_path):
        scene = generate_scene(3, 16, 16, 3)
        episodes = generate_episodes(scene, 25, rng_seed=2,
                                     categories=list(range(12)))
        path = tmp_path / "episodes.txt"
        save_episodes(path, episodes)
        assert load_episodes(path) == episodes
        assert episodes_to_text(episodes) == episodes_to_text(load_episodes(path))

    def test_malformed_record_rejected(self):
        with pytest.raises(ValueError):
            episodes_from_text("episode 0 1 1 0 5 5\n")


class TestNavEnv:
    def test_env_runs_episode(self, acoustic_cfg, signatures):
        scene = generate_scene(3, 16, 16, 3)
        episodes = generate_episodes(scene, 5, rng_seed=1, categories=[0, 1])
        env = NavEnv({scene.scene_id: scene}, episodes, signatures, acoustic_cfg)
        obs = env.reset()
        assert obs.prev_action is None
        assert obs.depth.shape == (16,)
        assert obs.audio.left.shape == (acoustic_cfg.freq_bins, acoustic_cfg.time_frames)
        result = env.step(Action.TURN_LEFT)
        assert result.observation.prev_action == Action.TURN_LEFT
        result = env.step(Action.STOP)
        assert result.done
        with pytest.raises(EpisodeFinishedError):
            env.step(Action.STOP)

    def test_env_cycles_episodes_with_stride(self, acoustic_cfg, signatures):
        scene = generate_scene(3, 16, 16, 3)
        episodes = generate_episodes(scene, 6, rng_seed=1, categories=[0])
        env = NavEnv({scene.scene_id: scene}, episodes, signatures, acoustic_cfg,
                     episode_offset=1, episode_stride=2)
        seen = []
        for _ in range(3):
            env.reset()
            seen.append(env.episode)
        assert seen == [episodes[1], episodes[3], episodes[5]]

    def test_audio_energy_matches_closed_form(self, acoustic_cfg, signatures):
        scene = generate_scene(3, 16, 16, 3)
        episodes = generate_episodes(scene, 5, rng_seed=3, categories=[2])
        env = NavEnv({scene.scene_id: scene}, episodes, signatures, acoustic_cfg)
        obs = env.reset()
        d0 = geodesic_distance(scene, (env.pose.x, env.pose.y), env.episode.source)
        yaw, pitch = relative_angles(env.pose, env.episode)
        lateral = acoustic_cfg.ild_coefficient * math.cos(pitch) * math.sin(yaw)
        gains_sq = 0.25 * ((1 + lateral) ** 2 + (1 - lateral) ** 2)
        env_sq = float((signatures[2].envelope.astype(np.float64) ** 2).sum())
        expected = env_sq * gains_sq / (1 + d0) ** 2
        assert obs.audio.energy() == pytest.approx(expected, rel=1e-5)
        # and the source cell is strictly the loudest observation point
        at_source = env._render(signatures[2], 0.0, 0.0, 0.0, acoustic_cfg)
        assert at_source.energy() > obs.audio.energy()
