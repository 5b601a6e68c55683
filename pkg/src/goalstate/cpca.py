"""Cross-instance proximity contact alignment.

A demonstrated goal (object A resting against B) is transferred to new
instances A', B': contacts are detected by ray casting in the demo, carried
to the new instances through non-rigid correspondences, and the goal pose of
A' is solved so the relative rotation and the contact centres are preserved.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import kernels
from .assets import ObjectGeometry, part_features
from .errors import NoContacts, NoFreePose, SizeMismatch
from .geometry import CorrespondenceSet, PointCloud, RigidTransform, nn_correspondences
from .registration import CPDParams, cpd_nonrigid
from .scene import COLLISION_MARGIN, SceneObject, SceneState, collision_free

RAY_EPS = 1e-6


@dataclass(frozen=True)
class ContactSet:
    """Contacts in one object's frame.

    ``anchors`` index the object's surface cloud point each contact is tied to
    and ``offsets`` hold ``points - cloud[anchors]``; both are zero-offset for
    contacts that originate at cloud points.
    """
    points: np.ndarray
    directions: np.ndarray
    distances: np.ndarray
    anchors: np.ndarray
    offsets: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        dirs = np.asarray(self.directions, dtype=np.float64).reshape(-1, 3)
        dist = np.asarray(self.distances, dtype=np.float64).reshape(-1)
        anc = np.asarray(self.anchors, dtype=np.int64).reshape(-1)
        off = np.asarray(self.offsets, dtype=np.float64).reshape(-1, 3)
        m = pts.shape[0]
        if not (dirs.shape[0] == dist.shape[0] == anc.shape[0] == off.shape[0] == m):
            raise SizeMismatch("contact arrays must share their length")
        if m and np.abs(np.linalg.norm(dirs, axis=1) - 1.0).max() > 1e-9:
            raise ValueError("contact directions must be unit vectors")
        if np.any(dist < 0):
            raise ValueError("contact distances must be non-negative")
        for name, arr in (("points", pts), ("directions", dirs), ("distances", dist),
                          ("anchors", anc), ("offsets", off)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self):
        return self.points.shape[0]

    @classmethod
    def at_cloud_points(cls, cloud_points, index, directions, distances) -> "ContactSet":
        index = np.asarray(index, dtype=np.int64)
        return cls(np.asarray(cloud_points)[index], directions, distances, index,
                   np.zeros((len(index), 3)))


@dataclass(frozen=True)
class GoalPose:
    transform: RigidTransform
    collision_free: bool
    sphere_radius_used: float


@dataclass(frozen=True)
class CollisionParams:
    radius_step: float = 0.005
    samples_per_shell: int = 64
    max_radius: float = 0.3
    margin: float = COLLISION_MARGIN


@dataclass(frozen=True)
class CPCAParams:
    contact_threshold: float = 0.01
    cpd: CPDParams = CPDParams()
    collision: CollisionParams = CollisionParams()
    features: Callable = part_features


@dataclass(frozen=True)
class DemoRecord:
    scene: SceneState
    moving_id: str
    proximal_id: str
    goal_pose: RigidTransform

    def to_dict(self) -> dict:
        return {"moving_id": self.moving_id, "proximal_id": self.proximal_id,
                "categories": {o.id: o.category for o in self.scene.objects},
                "goal_pose": self.goal_pose.to_dict(), "scene": self.scene.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "DemoRecord":
        return cls(SceneState.from_dict(d["scene"]), d["moving_id"], d["proximal_id"],
                   RigidTransform.from_dict(d["goal_pose"]))


# --- contact detection ----------------------------------------------------------

def estimate_normals(points: np.ndarray, k: int = 10) -> np.ndarray:
    """Outward normals from local covariance, oriented away from the centroid."""
    pts = np.asarray(points, dtype=np.float64)
    d2 = kernels.pairwise_sqdist(pts, pts)
    k = min(k, len(pts))
    nbr = np.argsort(d2, axis=1, kind="stable")[:, :k]
    normals = np.empty_like(pts)
    centroid = pts.mean(0)
    for i in range(len(pts)):
        q = pts[nbr[i]] - pts[nbr[i]].mean(0)
        _, vecs = np.linalg.eigh(q.T @ q)
        n = vecs[:, 0]
        if np.dot(n, pts[i] - centroid) < 0:
            n = -n
        normals[i] = n
    return normals


def _ray_triangle_hits(origins, dirs, v0, v1, v2):
    """Smallest ray parameter per ray hitting any triangle (Moller-Trumbore); inf if none."""
    e1 = v1 - v0
    e2 = v2 - v0
    p = np.cross(dirs[:, None, :], e2[None, :, :])
    det = np.einsum("fk,rfk->rf", e1, p)
    ok = np.abs(det) > 1e-14
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    s = origins[:, None, :] - v0[None, :, :]
    u = np.einsum("rfk,rfk->rf", s, p) * inv
    q = np.cross(s, e1[None, :, :])
    v = np.einsum("rk,rfk->rf", dirs, q) * inv
    t = np.einsum("fk,rfk->rf", e2, q) * inv
    tol = 1e-9
    hit = ok & (u >= -tol) & (v >= -tol) & (u + v <= 1 + tol) & (t >= -RAY_EPS)
    t = np.where(hit, t, np.inf)
    return t.min(axis=1)


def _ray_cloud_hits(origins, dirs, cloud):
    """Fallback without a mesh: a ray hits a cloud point within half the sample spacing."""
    d2 = kernels.pairwise_sqdist(cloud, cloud)
    np.fill_diagonal(d2, np.inf)
    radius = 0.5 * float(np.sqrt(np.median(d2.min(axis=1))))
    rel = cloud[None, :, :] - origins[:, None, :]
    t = np.einsum("rnk,rk->rn", rel, dirs)
    perp = np.linalg.norm(rel - t[..., None] * dirs[:, None, :], axis=2)
    t = np.where((perp <= radius) & (t >= -RAY_EPS), t, np.inf)
    return t.min(axis=1)


def detect_contacts(a: SceneObject, b: SceneObject, threshold: float = 0.01):
    """Proximal contacts between posed objects ``a`` and ``b``.

    Rays leave every surface point of ``a`` along its outward direction; a hit
    on ``b`` within ``threshold`` becomes a contact pair. The ``a`` side is
    anchored at the ray origin; the ``b`` side stores the exact hit point and
    points back along the ray, so ``c_b + d_b * l`` reproduces ``c_a``.
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    ga, gb = a.geometry, b.geometry
    pa_local = a.local_points()
    na_local = ga.posed_normals(a.joints)
    if na_local is None:
        na_local = estimate_normals(pa_local)
    origins = a.pose.apply(pa_local)
    dirs = na_local @ a.pose.rotation.T
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)

    if gb.triangles is not None and not b.joints:
        verts = b.pose.apply(gb.vertices)
        tri = gb.triangles
        t = _ray_triangle_hits(origins, dirs, verts[tri[:, 0]], verts[tri[:, 1]], verts[tri[:, 2]])
    else:
        t = _ray_cloud_hits(origins, dirs, b.world_points())
    sel = np.flatnonzero(t <= threshold)
    if sel.size == 0:
        raise NoContacts(f"no contacts between {a.id!r} and {b.id!r} within {threshold} m")
    dist = np.maximum(t[sel], 0.0)
    ray = dirs[sel]
    hit_world = origins[sel] + ray * dist[:, None]

    a_dirs = ray @ a.pose.rotation
    a_dirs /= np.linalg.norm(a_dirs, axis=1, keepdims=True)
    on_a = ContactSet(pa_local[sel], a_dirs, dist, sel, np.zeros((sel.size, 3)))

    hit_local = (hit_world - b.pose.translation) @ b.pose.rotation
    b_local = b.local_points()
    anchors, _ = kernels.nearest_neighbors(hit_local, b_local)
    b_dirs = -ray @ b.pose.rotation
    b_dirs /= np.linalg.norm(b_dirs, axis=1, keepdims=True)
    on_b = ContactSet(hit_local, b_dirs, dist, anchors, hit_local - b_local[anchors])
    return on_a, on_b


def transfer_contacts(contacts: ContactSet, correspondences: CorrespondenceSet,
                      target_cloud) -> ContactSet:
    """Relocate contacts onto the corresponding points of the target instance.

    Directions and distances are kept; the sub-sample offset from each anchor
    is carried over unchanged.
    """
    tgt = target_cloud.points if isinstance(target_cloud, PointCloud) else np.asarray(target_cloud)
    if len(contacts) and contacts.anchors.max() >= correspondences.source_size:
        raise IndexError("correspondences do not cover the contact anchors")
    new_anchor = correspondences.targets[contacts.anchors]
    return ContactSet(tgt[new_anchor] + contacts.offsets, contacts.directions,
                      contacts.distances, new_anchor, contacts.offsets)


def solve_goal_pose(contacts_a: ContactSet, contacts_b: ContactSet, r_a, r_b,
                    pose_b_prime: RigidTransform) -> RigidTransform:
    """Pose of A' keeping the demo relative rotation and aligning contact centres.

    ``r_a``/``r_b`` are the demo rotations of A (at its goal) and B.
    """
    if len(contacts_a) != len(contacts_b):
        raise SizeMismatch(f"{len(contacts_a)} contacts on A' vs {len(contacts_b)} on B'")
    if len(contacts_a) == 0:
        raise NoContacts("need at least one contact")
    Rb2, tb2 = pose_b_prime.rotation, pose_b_prime.translation
    Ra2 = Rb2 @ np.asarray(r_b).T @ np.asarray(r_a)
    target = (contacts_b.points @ Rb2.T + tb2
              + (contacts_b.directions * contacts_b.distances[:, None]) @ Rb2.T)
    t = np.mean(target - contacts_a.points @ Ra2.T, axis=0)
    # project out rounding drift so the RigidTransform invariant holds
    u, _, vt = np.linalg.svd(Ra2)
    return RigidTransform(u @ vt, t)


# --- collision resolution ----------------------------------------------------------

def fibonacci_directions(n: int) -> np.ndarray:
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    phi = np.pi * (3.0 - np.sqrt(5.0)) * np.arange(n)
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def resolve_collision(candidate: RigidTransform, moving: ObjectGeometry, scene: SceneState,
                      params: CollisionParams = CollisionParams(), moving_id: str = "moving",
                      joints: Optional[dict] = None) -> GoalPose:
    """First collision-free pose on growing spheres around the candidate position.

    Orientation is kept; ``scene`` must not contain the moving object itself.
    """
    if params.radius_step <= 0 or params.samples_per_shell <= 0 or params.max_radius <= 0:
        raise ValueError("collision search parameters must be positive")
    js = dict(joints or {})

    def free(pose):
        return collision_free(scene, SceneObject(moving_id, moving, pose, js), params.margin)

    if free(candidate):
        return GoalPose(candidate, True, 0.0)
    dirs = fibonacci_directions(params.samples_per_shell)
    n_shells = int(np.floor(params.max_radius / params.radius_step + 1e-9))
    for k in range(1, n_shells + 1):
        r = k * params.radius_step
        for d in dirs:
            pose = RigidTransform(candidate.rotation, candidate.translation + r * d)
            if free(pose):
                return GoalPose(pose, True, r)
    raise NoFreePose(f"no collision-free pose within {params.max_radius} m")


# --- pipeline ------------------------------------------------------------------------

@dataclass(frozen=True)
class TransferTrace:
    """Intermediate products of one transfer, for inspection and tests."""
    contacts_a: ContactSet
    contacts_b: ContactSet
    transferred_a: ContactSet
    transferred_b: ContactSet
    solved: RigidTransform
    cpd_converged: tuple = field(default=(True, True))


def _correspond(src: ObjectGeometry, dst: ObjectGeometry, params: CPCAParams):
    sc, dc = src.cloud(params.features), dst.cloud(params.features)
    res = cpd_nonrigid(sc, dc, params.cpd)
    return nn_correspondences(res.deformed, dc), res.converged


def cpca_transfer(demo: DemoRecord, augmented: SceneState,
                  params: CPCAParams = CPCAParams()) -> TransferTrace:
    """Everything up to, but not including, collision resolution."""
    A = demo.scene[demo.moving_id]
    B = demo.scene[demo.proximal_id]
    A2 = augmented[demo.moving_id]
    B2 = augmented[demo.proximal_id]
    if A.category != A2.category or B.category != B2.category:
        raise ValueError("augmented objects must share the demo categories")
    corr_a, conv_a = _correspond(A.geometry, A2.geometry, params)
    corr_b, conv_b = _correspond(B.geometry, B2.geometry, params)
    A_goal = SceneObject(A.id, A.geometry, demo.goal_pose, A.joints)
    ca, cb = detect_contacts(A_goal, B, params.contact_threshold)
    ta = transfer_contacts(ca, corr_a, A2.geometry.points)
    tb = transfer_contacts(cb, corr_b, B2.geometry.points)
    solved = solve_goal_pose(ta, tb, demo.goal_pose.rotation, B.pose.rotation, B2.pose)
    return TransferTrace(ca, cb, ta, tb, solved, (conv_a, conv_b))


def cpca_generate(demo: DemoRecord, augmented: SceneState,
                  params: CPCAParams = CPCAParams()) -> GoalPose:
    """Goal pose of the moving object in ``augmented``, transferred from ``demo``."""
    trace = cpca_transfer(demo, augmented, params)
    A2 = augmented[demo.moving_id]
    return resolve_collision(trace.solved, A2.geometry, augmented.without(demo.moving_id),
                             params.collision, demo.moving_id, A2.joints)
