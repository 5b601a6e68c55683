"""Scenes, the collision proxy, spatial-relation predicates and pose sampling."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional

import numpy as np

from . import kernels
from .assets import ObjectGeometry, from_ref
from .errors import NoMatchingLink, SamplingExhausted
from .geometry import Aabb, RigidTransform

DEFAULT_WORKSPACE = Aabb([-0.6, -0.6, 0.0], [0.6, 0.6, 0.8])


class RelationKind(str, enum.Enum):
    ON_TOP = "OnTop"
    INSIDE = "Inside"
    INSIDE_LINK = "InsideLink"
    NEAR = "Near"
    JOINT = "Joint"


@dataclass(frozen=True)
class RelationParams:
    gap_tol: float = 0.003
    overlap_frac: float = 0.5
    near_max: float = 0.03
    link: Optional[str] = None  # InsideLink target link name


@dataclass(frozen=True)
class SceneObject:
    id: str
    geometry: ObjectGeometry
    pose: RigidTransform
    joints: dict = field(default_factory=dict)

    def __post_init__(self):
        for lk in self.geometry.links:
            if lk.name in self.joints:
                lo, hi = lk.limits
                v = self.joints[lk.name]
                if not lo - 1e-12 <= v <= hi + 1e-12:
                    raise ValueError(f"joint {lk.name}={v} outside [{lo}, {hi}]")

    @property
    def category(self) -> str:
        return self.geometry.category

    def local_points(self) -> np.ndarray:
        return self.geometry.posed_points(self.joints)

    def world_points(self) -> np.ndarray:
        return self.pose.apply(self.local_points())

    def world_normals(self) -> Optional[np.ndarray]:
        n = self.geometry.posed_normals(self.joints)
        return None if n is None else n @ self.pose.rotation.T

    def world_aabb(self) -> Aabb:
        p = self.world_points()
        return Aabb(p.min(0), p.max(0))

    def link_world_aabb(self, link: str) -> Aabb:
        lk = self.geometry.link(link)
        p = self.world_points()[lk.point_index]
        return Aabb(p.min(0), p.max(0))

    def to_dict(self) -> dict:
        return {"id": self.id, "category": self.category, "geometry": self.geometry.ref(),
                "pose": self.pose.to_dict(),
                "joints": {k: float(v) for k, v in sorted(self.joints.items())}}

    @classmethod
    def from_dict(cls, d: dict) -> "SceneObject":
        return cls(d["id"], from_ref(d["geometry"]), RigidTransform.from_dict(d["pose"]),
                   dict(d.get("joints", {})))


@dataclass(frozen=True)
class SceneState:
    objects: tuple
    workspace: Aabb = DEFAULT_WORKSPACE

    def __post_init__(self):
        objs = tuple(self.objects)
        ids = [o.id for o in objs]
        if len(set(ids)) != len(ids):
            raise ValueError("scene object ids must be unique")
        object.__setattr__(self, "objects", objs)

    def __getitem__(self, oid: str) -> SceneObject:
        for o in self.objects:
            if o.id == oid:
                return o
        raise KeyError(oid)

    def __contains__(self, oid: str) -> bool:
        return any(o.id == oid for o in self.objects)

    @property
    def ids(self) -> list:
        return [o.id for o in self.objects]

    def without(self, oid: str) -> "SceneState":
        return SceneState(tuple(o for o in self.objects if o.id != oid), self.workspace)

    def with_object(self, obj: SceneObject) -> "SceneState":
        objs = [o for o in self.objects if o.id != obj.id]
        if obj.id in self:
            objs = [obj if o.id == obj.id else o for o in self.objects]
        else:
            objs.append(obj)
        return SceneState(tuple(objs), self.workspace)

    def with_pose(self, oid: str, pose: RigidTransform) -> "SceneState":
        return self.with_object(replace(self[oid], pose=pose))

    def transformed(self, T: RigidTransform) -> "SceneState":
        """Every object moved by ``T``; the workspace is left as is."""
        return SceneState(tuple(replace(o, pose=T @ o.pose) for o in self.objects), self.workspace)

    def to_dict(self) -> dict:
        return {"workspace": self.workspace.to_dict(),
                "objects": [o.to_dict() for o in self.objects]}

    @classmethod
    def from_dict(cls, d: dict) -> "SceneState":
        return cls(tuple(SceneObject.from_dict(o) for o in d["objects"]),
                   Aabb.from_dict(d["workspace"]))


# --- collision proxy -----------------------------------------------------------

COLLISION_MARGIN = 0.002


def _penetrates(points_world: np.ndarray, obj: SceneObject, margin: float) -> bool:
    """True when any point sits deeper than ``margin`` inside one of ``obj``'s boxes."""
    local = (points_world - obj.pose.translation) @ obj.pose.rotation
    boxes = obj.geometry.posed_boxes(obj.joints)
    lo = boxes[:, 0] + margin
    hi = boxes[:, 1] - margin
    keep = np.all(lo < hi, axis=1)
    if not keep.any():
        return False
    return bool(kernels.points_in_boxes(local, lo[keep], hi[keep]).any())


def pair_collides(a: SceneObject, b: SceneObject, margin: float = COLLISION_MARGIN) -> bool:
    pa, pb = a.world_points(), b.world_points()
    if np.any(pa.min(0) > pb.max(0)) or np.any(pb.min(0) > pa.max(0)):
        return False
    return _penetrates(pa, b, margin) or _penetrates(pb, a, margin)


def in_workspace(points: np.ndarray, workspace: Aabb, margin: float = COLLISION_MARGIN) -> bool:
    return bool(np.all(points >= workspace.min - margin) and np.all(points <= workspace.max + margin))


def collision_free(scene: SceneState, moving: SceneObject, margin: float = COLLISION_MARGIN,
                   ignore: Iterable[str] = ()) -> bool:
    """Collision proxy: box penetration deeper than ``margin`` against every other
    object, plus containment in the workspace (whose floor is the table)."""
    if not in_workspace(moving.world_points(), scene.workspace, margin):
        return False
    skip = set(ignore) | {moving.id}
    return not any(pair_collides(moving, o, margin) for o in scene.objects if o.id not in skip)


def scene_collision_free(scene: SceneState, margin: float = COLLISION_MARGIN) -> bool:
    objs = scene.objects
    for i, a in enumerate(objs):
        if not in_workspace(a.world_points(), scene.workspace, margin):
            return False
        for b in objs[i + 1:]:
            if pair_collides(a, b, margin):
                return False
    return True


# --- relation predicates -------------------------------------------------------

def _xy_overlap_fraction(a: Aabb, b: Aabb) -> float:
    lo = np.maximum(a.min[:2], b.min[:2])
    hi = np.minimum(a.max[:2], b.max[:2])
    inter = float(np.prod(np.clip(hi - lo, 0.0, None)))
    area = float(np.prod(a.size[:2]))
    return inter / area if area > 0 else 0.0


def _inside(ab: Aabb, bb: Aabb) -> bool:
    if not bb.contains(ab, tol=1e-9):
        return False
    between_top_bottom = ab.min[2] >= bb.min[2] - 1e-9 and ab.max[2] <= bb.max[2] + 1e-9
    between_sides = bool(np.all(ab.min[:2] >= bb.min[:2] - 1e-9)
                         and np.all(ab.max[:2] <= bb.max[:2] + 1e-9))
    return between_top_bottom or between_sides


def surface_gap(a: SceneObject, b: SceneObject) -> float:
    """Smallest distance between the two sampled surfaces."""
    _, d2 = kernels.nearest_neighbors(a.world_points(), b.world_points())
    return float(np.sqrt(d2.min()))


def relation_holds(kind, a: SceneObject, b: SceneObject,
                   params: RelationParams = RelationParams()) -> bool:
    kind = RelationKind(kind)
    ab = a.world_aabb()
    if kind is RelationKind.INSIDE:
        return _inside(ab, b.world_aabb())
    if kind is RelationKind.INSIDE_LINK:
        if params.link is None:
            raise ValueError("InsideLink needs params.link")
        return _inside(ab, b.link_world_aabb(params.link))
    if kind is RelationKind.ON_TOP:
        bb = b.world_aabb()
        gap = ab.min[2] - bb.max[2]
        return bool(abs(gap) <= params.gap_tol
                    and _xy_overlap_fraction(ab, bb) >= params.overlap_frac)
    if kind is RelationKind.NEAR:
        gap = surface_gap(a, b)
        return 0.0 < gap <= params.near_max
    raise ValueError(f"{kind.value} is not a spatial relation")


# --- sampling -----------------------------------------------------------------

MAX_ATTEMPTS = 10_000


def sample_relation_pose(kind, a: ObjectGeometry, b: SceneObject, scene: SceneState,
                         rng_seed, params: RelationParams = RelationParams(),
                         moving_id: str = "moving", joints: Optional[dict] = None,
                         max_attempts: int = MAX_ATTEMPTS,
                         margin: float = COLLISION_MARGIN) -> RigidTransform:
    """Rejection-sample a yaw-only pose of ``a`` satisfying ``kind`` against ``b``.

    Positions are uniform over a region derived from ``b``'s AABB: its top face
    (OnTop, resting height), its volume (Inside), or its footprint grown by the
    near distance plus the object radius at ``b``'s support height (Near).
    """
    kind = RelationKind(kind)
    rng = np.random.default_rng(rng_seed)
    local = a.posed_points(joints)
    zmin_local = float(local[:, 2].min())
    radius_xy = float(np.max(np.linalg.norm(local[:, :2], axis=1)))
    if kind is RelationKind.INSIDE_LINK:
        region = b.link_world_aabb(params.link)
    else:
        region = b.world_aabb()
    rest = scene.without(moving_id)
    for _ in range(max_attempts):
        yaw = rng.uniform(0.0, 2.0 * np.pi)
        if kind is RelationKind.ON_TOP:
            xy = rng.uniform(region.min[:2], region.max[:2])
            pos = np.array([xy[0], xy[1], region.max[2] - zmin_local])
        elif kind in (RelationKind.INSIDE, RelationKind.INSIDE_LINK):
            pos = rng.uniform(region.min, region.max)
        elif kind is RelationKind.NEAR:
            grow = params.near_max + radius_xy
            xy = rng.uniform(region.min[:2] - grow, region.max[:2] + grow)
            pos = np.array([xy[0], xy[1], region.min[2] - zmin_local])
        else:
            raise ValueError("Joint goals are not pose-sampled")
        pose = RigidTransform.from_yaw(yaw, pos)
        cand = SceneObject(moving_id, a, pose, dict(joints or {}))
        if not relation_holds(kind, cand, b, params):
            continue
        if collision_free(rest, cand, margin):
            return pose
    raise SamplingExhausted(f"no {kind.value} pose found in {max_attempts} attempts")


# --- joints -------------------------------------------------------------------

def align_joint_state(demo: ObjectGeometry, demo_joints: dict, target: ObjectGeometry) -> dict:
    """Map demo joint values onto ``target`` by normalized position within limits,
    matching links by category."""
    out = {}
    for dl in demo.links:
        if dl.name not in demo_joints:
            continue
        for tl in target.links:
            if tl.category == dl.category and tl.name not in out:
                v = float(demo_joints[dl.name])
                if tuple(tl.limits) == tuple(dl.limits):
                    out[tl.name] = v
                else:
                    out[tl.name] = float(tl.denormalized(dl.normalized(v)))
                break
    if not out:
        raise NoMatchingLink(f"no link of {target.category!r} matches {demo.category!r}")
    return out
