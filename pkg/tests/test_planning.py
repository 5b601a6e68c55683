import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from goalstate.errors import NoFeasibleSplit, ZeroDisplacement
from goalstate.geometry import Aabb, RigidTransform
from goalstate.planning import (PlannerParams, Trajectory, check_segment_free,
                                decompose_translation_first, plan_for_split, push_primitive,
                                split_candidates, trajectory_free)


def dense_oracle(a, b, r, boxes, res=1e-4):
    """Sample the segment every ``res`` and test point-box distances."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    n = max(1, int(np.ceil(np.linalg.norm(b - a) / res)))
    s = np.linspace(0.0, 1.0, n + 1)[:, None]
    pts = a + s * (b - a)
    for box in boxes:
        d = np.linalg.norm(np.maximum(np.maximum(box.min - pts, pts - box.max), 0.0), axis=1)
        if np.any(d <= r + 1e-12):
            return False
    return True


def random_box(rng):
    c = rng.uniform(-0.3, 0.3, 3)
    h = rng.uniform(0.01, 0.1, 3)
    return Aabb(c - h, c + h)


class TestSegmentFree:
    def test_no_obstacles(self):
        assert check_segment_free([0, 0, 0], [1, 1, 1], 0.1, [])

    def test_through_interior(self):
        box = Aabb([-0.1, -0.1, -0.1], [0.1, 0.1, 0.1])
        assert not check_segment_free([-1, 0, 0], [1, 0, 0], 0.0, [box])

    def test_tangent_is_collision(self):
        box = Aabb([-0.1, -0.1, -0.1], [0.1, 0.1, 0.1])
        assert not check_segment_free([-1, 0.35, 0], [1, 0.35, 0], 0.25, [box])
        assert not dense_oracle([-1, 0.35, 0], [1, 0.35, 0], 0.25, [box])
        assert check_segment_free([-1, 0.36, 0], [1, 0.36, 0], 0.25, [box])

    def test_negative_radius(self):
        with pytest.raises(ValueError):
            check_segment_free([0, 0, 0], [1, 0, 0], -1.0, [])

    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            a, b = rng.uniform(-0.5, 0.5, 3), rng.uniform(-0.5, 0.5, 3)
            boxes = [random_box(rng) for _ in range(rng.integers(1, 3))]
            r = rng.uniform(0.0, 0.05)
            assert check_segment_free(a, b, r, boxes) == dense_oracle(a, b, r, boxes)


def yaw(angle, pos):
    return RigidTransform.from_yaw(angle, pos)


class TestDecompose:
    def test_obstacle_free_splits_at_goal(self):
        start, goal = yaw(0.0, [0, 0, 0]), yaw(1.2, [0.3, 0.2, 0.1])
        traj = decompose_translation_first(start, goal)
        np.testing.assert_array_equal(traj.waypoints[traj.split_index].translation, goal.translation)
        assert traj.waypoints[-1] is goal or np.array_equal(traj.waypoints[-1].rotation, goal.rotation)

    def test_same_orientation_is_pure_translation(self):
        R = Rotation.from_euler("xyz", [0.1, 0.2, 0.3]).as_matrix()
        start, goal = RigidTransform(R, [0, 0, 0]), RigidTransform(R, [0.2, -0.1, 0.0])
        traj = decompose_translation_first(start, goal)
        assert traj.split_index == len(traj) - 1
        for w in traj.waypoints:
            np.testing.assert_array_equal(w.rotation, R)

    def test_blocked_near_goal_splits_midway(self):
        # a bar along x ends up turned along y; a box beside the goal catches the
        # unturned bar, so rotation has to start partway along the approach
        body = np.array([[x, 0.0, 0.0] for x in np.linspace(-0.1, 0.1, 5)])
        start, goal = yaw(0.0, [0.0, 0.0, 0.0]), yaw(np.pi / 2, [0.0, 0.5, 0.0])
        walls = [Aabb([0.07, 0.45, -0.1], [0.3, 0.55, 0.1])]
        params = PlannerParams(samples=20, sweep_radius=0.005)
        traj = decompose_translation_first(start, goal, walls, params, body)
        split = traj.waypoints[traj.split_index].translation
        assert 0.0 < split[1] < 0.5
        assert trajectory_free(traj, params, walls, body)
        # exhaustive oracle: the chosen split is the latest feasible candidate
        feasible = [f for f in split_candidates(params)
                    if trajectory_free(plan_for_split(start, goal, f, params), params, walls, body)]
        assert feasible and np.isclose(split[1], 0.5 * feasible[0])

    def test_no_feasible_split(self):
        wall = Aabb([-1, 0.2, -1], [1, 0.3, 1])
        with pytest.raises(NoFeasibleSplit):
            decompose_translation_first(yaw(0, [0, 0, 0]), yaw(1.0, [0, 0.5, 0]), [wall])

    def test_orientation_fixed_before_split(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            start = RigidTransform(Rotation.random(random_state=rng).as_matrix(), rng.normal(size=3) * 0.1)
            goal = RigidTransform(Rotation.random(random_state=rng).as_matrix(), rng.normal(size=3) * 0.1)
            traj = decompose_translation_first(start, goal)
            for w in traj.waypoints[:traj.split_index + 1]:
                np.testing.assert_array_equal(w.rotation, start.rotation)
            np.testing.assert_allclose(traj.waypoints[-1].rotation, goal.rotation, atol=1e-12)

    def test_json_export(self):
        traj = decompose_translation_first(yaw(0, [0, 0, 0]), yaw(0.5, [0.1, 0, 0]))
        d = json.loads(traj.to_json())
        assert d["split_index"] == traj.split_index
        assert set(d["waypoints"][0]) == {"position", "quaternion_wxyz"}

    def test_trajectory_invariant_enforced(self):
        with pytest.raises(ValueError):
            Trajectory((yaw(0, [0, 0, 0]), yaw(1, [0, 0, 0])), 1)


class TestPush:
    def cloud(self):
        return np.random.default_rng(0).uniform(-0.03, 0.03, size=(50, 3))

    def test_pure_x(self):
        a = self.cloud()
        cmd = push_primitive(a, a + [0.1, 0, 0])
        np.testing.assert_allclose(cmd.direction, [1, 0, 0], atol=1e-12)
        assert cmd.distance == pytest.approx(0.1, abs=1e-12)
        ext = a[:, 0].max() - a[:, 0].min()
        np.testing.assert_allclose(cmd.start, a.mean(0) - [0.5 * ext + 0.005, 0, 0], atol=1e-12)

    def test_no_motion(self):
        a = self.cloud()
        with pytest.raises(ZeroDisplacement):
            push_primitive(a, a)

    def test_vertical_dropped(self):
        a = self.cloud()
        cmd = push_primitive(a, a + [0.06, 0.08, 0.02])
        np.testing.assert_allclose(cmd.direction, [0.6, 0.8, 0.0], atol=1e-12)
        assert cmd.distance == pytest.approx(0.1, abs=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(st.floats(0, 2 * np.pi), st.floats(-0.2, 0.2), st.floats(-0.2, 0.2))
    def test_equivariant_under_yaw(self, angle, dx, dy):
        if np.hypot(dx, dy) < 1e-3:
            return
        a = self.cloud()
        b = a + [dx, dy, 0.01]
        R = Rotation.from_euler("z", angle).as_matrix()
        c0 = push_primitive(a, b)
        c1 = push_primitive(a @ R.T, b @ R.T)
        np.testing.assert_allclose(c1.direction, R @ c0.direction, atol=1e-9)
        assert abs(c1.distance - c0.distance) < 1e-9
