"""Translation-first trajectory decomposition, push primitive and capsule collision checks."""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.spatial.transform import Rotation, Slerp

from . import kernels
from .errors import NoFeasibleSplit, ZeroDisplacement
from .geometry import Aabb, PointCloud, RigidTransform

CONTACT_TOL = 1e-12
PUSH_CLEARANCE = 0.005


def check_segment_free(a, b, sweep_radius: float, obstacles: Sequence[Aabb]) -> bool:
    """True iff the capsule from ``a`` to ``b`` touches no obstacle box.

    Boxes and capsule are closed sets, so touching at exactly ``sweep_radius``
    counts as a collision.
    """
    if sweep_radius < 0:
        raise ValueError("sweep_radius must be non-negative")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    for box in obstacles:
        d2 = kernels.segment_aabb_sqdist(a, b, box.min, box.max)
        if np.sqrt(d2) <= sweep_radius + CONTACT_TOL:
            return False
    return True


@dataclass(frozen=True)
class Trajectory:
    waypoints: tuple
    split_index: int

    def __post_init__(self):
        wps = tuple(self.waypoints)
        object.__setattr__(self, "waypoints", wps)
        if not 0 <= self.split_index < len(wps):
            raise ValueError("split_index must index a waypoint")
        R0 = wps[0].rotation
        for w in wps[:self.split_index + 1]:
            if not np.array_equal(w.rotation, R0):
                raise ValueError("orientation changes before split_index")

    def __len__(self):
        return len(self.waypoints)

    @property
    def positions(self) -> np.ndarray:
        return np.array([w.translation for w in self.waypoints])

    def to_dict(self) -> dict:
        return {"split_index": self.split_index,
                "waypoints": [{"position": w.translation.tolist(),
                               "quaternion_wxyz": w.quaternion().tolist()}
                              for w in self.waypoints]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass(frozen=True)
class PlannerParams:
    samples: int = 50             # candidate split positions between goal and start
    waypoint_step: float = 0.01   # spacing of emitted waypoints (m)
    angle_step: float = 0.1       # max rotation between waypoints (rad)
    sweep_radius: float = 0.02    # capsule radius around each body point


def _body(body_points) -> np.ndarray:
    if body_points is None:
        return np.zeros((1, 3))
    return np.asarray(body_points, dtype=np.float64).reshape(-1, 3)


def _path_free(poses: Sequence[RigidTransform], body: np.ndarray, radius: float,
               obstacles: Sequence[Aabb]) -> bool:
    """Every body point's polyline through ``poses`` keeps ``radius`` clear of the boxes."""
    if len(poses) == 1:
        pts = poses[0].apply(body)
        return all(check_segment_free(p, p, radius, obstacles) for p in pts)
    prev = poses[0].apply(body)
    for pose in poses[1:]:
        cur = pose.apply(body)
        for p, q in zip(prev, cur):
            if not check_segment_free(p, q, radius, obstacles):
                return False
        prev = cur
    return True


def _segment_positions(a, b, step):
    n = max(1, int(np.ceil(np.linalg.norm(b - a) / step - 1e-12)))
    return [a + (b - a) * (k / n) for k in range(n + 1)]


def _rotation_phase(split: RigidTransform, goal: RigidTransform, params: PlannerParams) -> list:
    """Poses from ``split`` (exclusive) to ``goal`` (inclusive), slerped and lerped."""
    rel = Rotation.from_matrix(goal.rotation @ split.rotation.T)
    angle = float(np.linalg.norm(rel.as_rotvec()))
    dist = float(np.linalg.norm(goal.translation - split.translation))
    if angle == 0.0 and dist == 0.0:
        return []
    n = max(1, int(np.ceil(max(angle / params.angle_step, dist / params.waypoint_step) - 1e-12)))
    slerp = Slerp([0.0, 1.0], Rotation.from_matrix(np.stack([split.rotation, goal.rotation])))
    out = []
    for k in range(1, n):
        s = k / n
        out.append(RigidTransform(slerp([s]).as_matrix()[0],
                                  split.translation + s * (goal.translation - split.translation)))
    out.append(goal)
    return out


def split_candidates(params: PlannerParams) -> list:
    """Fractions of the start->goal line, from the goal backward to the start."""
    n = max(1, int(params.samples))
    return [1.0 - k / n for k in range(n + 1)]


def plan_for_split(start: RigidTransform, goal: RigidTransform, frac: float,
                   params: PlannerParams) -> Trajectory:
    """Translate at the start orientation to ``frac`` of the way, then rotate and finish."""
    split_pos = start.translation + frac * (goal.translation - start.translation)
    if frac == 1.0:
        split_pos = goal.translation.copy()
    R0 = start.rotation
    phase1 = [RigidTransform(R0, p)
              for p in _segment_positions(start.translation, split_pos, params.waypoint_step)]
    phase2 = _rotation_phase(phase1[-1], goal, params)
    if phase2 and np.array_equal(goal.rotation, R0):
        # already at the goal orientation: keep the orientation object identical
        phase2 = [RigidTransform(R0, w.translation) for w in phase2]
        return Trajectory(tuple(phase1 + phase2), len(phase1) + len(phase2) - 1)
    return Trajectory(tuple(phase1 + phase2), len(phase1) - 1)


def trajectory_free(traj: Trajectory, params: PlannerParams, obstacles, body_points=None) -> bool:
    return _path_free(traj.waypoints, _body(body_points), params.sweep_radius, obstacles)


def decompose_translation_first(start: RigidTransform, goal: RigidTransform,
                                obstacles: Sequence[Aabb] = (),
                                params: PlannerParams = PlannerParams(),
                                body_points=None) -> Trajectory:
    """Translation-prioritized trajectory: rotation lags behind translation.

    Split positions are tried from the goal backward; the first one whose
    fixed-orientation approach and subsequent rotate-and-translate phase both
    keep every swept body point clear of the obstacles is returned.
    ``body_points`` are in the moving frame (default: its origin only).
    """
    if params.samples < 1:
        raise ValueError("samples must be at least 1")
    body = _body(body_points)
    for frac in split_candidates(params):
        traj = plan_for_split(start, goal, frac, params)
        approach = traj.waypoints[:traj.split_index + 1]
        if not _path_free(approach, body, params.sweep_radius, obstacles):
            continue
        if _path_free(traj.waypoints[traj.split_index:], body, params.sweep_radius, obstacles):
            return traj
    raise NoFeasibleSplit("no split position yields a collision-free trajectory")


@dataclass(frozen=True)
class PushCommand:
    start: np.ndarray
    direction: np.ndarray
    distance: float

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise ValueError("push direction must be a unit vector")
        if self.distance < 0:
            raise ValueError("push distance must be non-negative")
        object.__setattr__(self, "start", np.asarray(self.start, dtype=np.float64))
        object.__setattr__(self, "direction", d)

    def to_dict(self) -> dict:
        return {"start": self.start.tolist(), "direction": self.direction.tolist(),
                "distance": float(self.distance)}


def push_primitive(initial_cloud, goal_cloud, clearance: float = PUSH_CLEARANCE) -> PushCommand:
    """Horizontal push along the mean point displacement, approached from the trailing side."""
    a = initial_cloud.points if isinstance(initial_cloud, PointCloud) else np.asarray(initial_cloud, float)
    b = goal_cloud.points if isinstance(goal_cloud, PointCloud) else np.asarray(goal_cloud, float)
    if a.shape != b.shape:
        raise ValueError(f"point counts differ: {a.shape[0]} vs {b.shape[0]}")
    mean = np.mean(b - a, axis=0)
    horiz = np.array([mean[0], mean[1], 0.0])
    dist = float(np.linalg.norm(horiz))
    if dist < 1e-6:
        raise ZeroDisplacement(f"mean horizontal displacement {dist:.3g} m is below 1e-6 m")
    direction = horiz / dist
    proj = a @ direction
    half = 0.5 * float(proj.max() - proj.min())
    start = a.mean(axis=0) - direction * (half + clearance)
    return PushCommand(start, direction, dist)


def plan_placement(scene, moving_id: str, goal_pose: RigidTransform,
                   params: PlannerParams = PlannerParams(), grasp_clearance: float = 0.05) -> Trajectory:
    """Translation-first motion of a top grasp point carrying ``moving_id`` to ``goal_pose``.

    The grasp proxy sits ``grasp_clearance`` above the object's highest point
    in its own frame; every other object's world AABB is an obstacle.
    """
    obj = scene[moving_id]
    top = float(obj.local_points()[:, 2].max())
    grasp = np.array([[0.0, 0.0, top + grasp_clearance]])
    obstacles = [o.world_aabb() for o in scene.objects if o.id != moving_id]
    return decompose_translation_first(obj.pose, goal_pose, obstacles, params, grasp)
