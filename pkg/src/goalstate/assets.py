"""Procedural object geometry.

Every asset is built from a kind name and a parameter dict, so scenes can
reference geometry by ``{"kind", "params"}`` and rebuild it exactly. Object
frames put the origin at the bottom centre of the footprint with +z up.

Each asset carries a surface cloud with analytic outward normals, a triangle
mesh for ray casting, object-frame collision boxes, and integer part labels
that stand in for learned per-point descriptors.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .geometry import Aabb, PointCloud, RigidTransform

PART_NAMES = ("side", "top", "bottom", "rim", "inner", "handle", "spout", "base", "drawer", "lid")
PART = {name: i for i, name in enumerate(PART_NAMES)}

TARGET_POINTS = 320


@dataclass(frozen=True)
class Link:
    name: str
    category: str
    joint_type: str  # "revolute" | "prismatic"
    axis: np.ndarray
    origin: np.ndarray
    limits: tuple
    point_index: np.ndarray
    box_index: tuple = ()

    def __post_init__(self):
        if self.joint_type not in ("revolute", "prismatic"):
            raise ValueError(f"unknown joint type {self.joint_type!r}")
        lo, hi = self.limits
        if lo > hi:
            raise ValueError("joint limits must be ordered")
        axis = np.asarray(self.axis, dtype=np.float64)
        object.__setattr__(self, "axis", axis / np.linalg.norm(axis))
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64))
        object.__setattr__(self, "point_index", np.asarray(self.point_index, dtype=np.int64))

    def motion(self, value: float) -> RigidTransform:
        """Object-frame transform applied to this link at joint ``value``."""
        if self.joint_type == "prismatic":
            return RigidTransform.from_translation(self.axis * value)
        k = self.axis
        K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
        R = np.eye(3) + np.sin(value) * K + (1 - np.cos(value)) * (K @ K)
        return RigidTransform(R, self.origin - R @ self.origin)

    def normalized(self, value: float) -> float:
        lo, hi = self.limits
        return 0.0 if hi == lo else (value - lo) / (hi - lo)

    def denormalized(self, u: float) -> float:
        lo, hi = self.limits
        return lo + u * (hi - lo)


@dataclass(frozen=True)
class ObjectGeometry:
    category: str
    points: np.ndarray
    normals: Optional[np.ndarray]
    parts: np.ndarray
    vertices: Optional[np.ndarray] = None
    triangles: Optional[np.ndarray] = None
    boxes: np.ndarray = field(default_factory=lambda: np.zeros((0, 2, 3)))
    links: tuple = ()
    kind: str = ""
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "parts", np.asarray(self.parts, dtype=np.int64))
        if self.triangles is not None:
            tri = np.asarray(self.triangles, dtype=np.int64)
            if tri.size and (tri.min() < 0 or tri.max() >= len(self.vertices)):
                raise IndexError("triangle index out of bounds")
            object.__setattr__(self, "triangles", tri)
        if len(self.boxes) == 0:
            object.__setattr__(self, "boxes", np.array([[pts.min(0), pts.max(0)]]))

    @property
    def size(self) -> int:
        return self.points.shape[0]

    def cloud(self, features: Optional[Callable] = None) -> PointCloud:
        fn = features or part_features
        return PointCloud(self.points, fn(self))

    def ref(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params)}

    def link(self, name: str) -> Link:
        for lk in self.links:
            if lk.name == name:
                return lk
        raise KeyError(name)

    def default_joints(self) -> dict:
        return {lk.name: float(lk.limits[0]) for lk in self.links}

    def posed_points(self, joints: Optional[dict] = None) -> np.ndarray:
        """Object-frame surface points after forward kinematics."""
        if not self.links or not joints:
            return self.points
        pts = self.points.copy()
        for lk in self.links:
            if lk.name in joints:
                pts[lk.point_index] = lk.motion(joints[lk.name]).apply(self.points[lk.point_index])
        return pts

    def posed_normals(self, joints: Optional[dict] = None) -> Optional[np.ndarray]:
        if self.normals is None or not self.links or not joints:
            return self.normals
        nrm = self.normals.copy()
        for lk in self.links:
            if lk.name in joints:
                R = lk.motion(joints[lk.name]).rotation
                nrm[lk.point_index] = self.normals[lk.point_index] @ R.T
        return nrm

    def posed_boxes(self, joints: Optional[dict] = None) -> np.ndarray:
        if not self.links or not joints:
            return self.boxes
        boxes = self.boxes.copy()
        for lk in self.links:
            if lk.name not in joints:
                continue
            T = lk.motion(joints[lk.name])
            for b in lk.box_index:
                lo, hi = self.boxes[b]
                corners = np.array([[x, y, z] for x in (lo[0], hi[0])
                                    for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
                c = T.apply(corners)
                boxes[b] = [c.min(0), c.max(0)]
        return boxes

    def local_aabb(self) -> Aabb:
        return Aabb(self.points.min(0), self.points.max(0))


def part_features(geom: ObjectGeometry) -> np.ndarray:
    """Default per-point descriptor: one-hot part label."""
    out = np.zeros((geom.size, len(PART_NAMES)))
    out[np.arange(geom.size), geom.parts] = 1.0
    return out


# --- surface samplers ---------------------------------------------------------

def _spacing(area: float, target: int = TARGET_POINTS) -> float:
    return float(np.sqrt(area / target))


def _rect(center, u, v, half_u, half_v, normal, spacing, part):
    # grids include the face edges so cloud AABBs match the true extents
    nu = max(2, int(round(2 * half_u / spacing)) + 1)
    nv = max(2, int(round(2 * half_v / spacing)) + 1)
    su = np.linspace(-half_u, half_u, nu)
    sv = np.linspace(-half_v, half_v, nv)
    uu, vv = np.meshgrid(su, sv, indexing="ij")
    pts = (np.asarray(center)[None] + uu.reshape(-1, 1) * np.asarray(u)[None]
           + vv.reshape(-1, 1) * np.asarray(v)[None])
    nrm = np.tile(np.asarray(normal, dtype=float), (len(pts), 1))
    return pts, nrm, np.full(len(pts), PART[part])


def _box_surface(lo, hi, spacing, part="side", top_part="top", bottom_part="bottom", skip=()):
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    c, h = 0.5 * (lo + hi), 0.5 * (hi - lo)
    ex, ey, ez = np.eye(3)
    faces = {
        "+x": (c + h[0] * ex, ey, ez, h[1], h[2], ex, part),
        "-x": (c - h[0] * ex, ey, ez, h[1], h[2], -ex, part),
        "+y": (c + h[1] * ey, ex, ez, h[0], h[2], ey, part),
        "-y": (c - h[1] * ey, ex, ez, h[0], h[2], -ey, part),
        "+z": (c + h[2] * ez, ex, ey, h[0], h[1], ez, top_part),
        "-z": (c - h[2] * ez, ex, ey, h[0], h[1], -ez, bottom_part),
    }
    out = [_rect(*faces[k][:6], spacing, faces[k][6]) for k in faces if k not in skip]
    return _stack(out)


def _disk(radius, z, normal_z, spacing, part):
    pts = [[0.0, 0.0, z]]
    nr = max(1, int(round(radius / spacing)))
    for i in range(1, nr + 1):
        r = radius * i / nr
        na = max(6, int(round(2 * np.pi * r / spacing)))
        a = 2 * np.pi * (np.arange(na) + 0.5 * (i % 2)) / na
        pts.extend(np.column_stack([r * np.cos(a), r * np.sin(a), np.full(na, z)]))
    pts = np.asarray(pts)
    nrm = np.tile([0.0, 0.0, normal_z], (len(pts), 1))
    return pts, nrm, np.full(len(pts), PART[part])


def _cyl_side(radius, z0, z1, spacing, part, inward=False):
    na = max(8, int(round(2 * np.pi * radius / spacing)))
    nz = max(2, int(round((z1 - z0) / spacing)) + 1)
    a = 2 * np.pi * np.arange(na) / na
    zs = np.linspace(z0, z1, nz)
    aa, zz = np.meshgrid(a, zs, indexing="ij")
    aa, zz = aa.ravel(), zz.ravel()
    pts = np.column_stack([radius * np.cos(aa), radius * np.sin(aa), zz])
    nrm = np.column_stack([np.cos(aa), np.sin(aa), np.zeros_like(aa)])
    if inward:
        nrm = -nrm
    return pts, nrm, np.full(len(pts), PART[part])


def _stack(chunks):
    pts = np.vstack([c[0] for c in chunks])
    nrm = np.vstack([c[1] for c in chunks])
    parts = np.concatenate([c[2] for c in chunks])
    return pts, nrm, parts


# --- meshes -------------------------------------------------------------------

def _box_mesh(lo, hi):
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    v = np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
    # vertex index = 4*ix + 2*iy + iz
    quads = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    tris = []
    for a, b, c, d in quads:
        tris += [(a, b, c), (a, c, d)]
    return v, np.array(tris)


def _cyl_mesh(radius, z0, z1, segments=32, bottom=True, top=True):
    a = 2 * np.pi * np.arange(segments) / segments
    ring = np.column_stack([radius * np.cos(a), radius * np.sin(a)])
    v = np.vstack([np.column_stack([ring, np.full(segments, z0)]),
                   np.column_stack([ring, np.full(segments, z1)]),
                   [[0.0, 0.0, z0], [0.0, 0.0, z1]]])
    tris = []
    for i in range(segments):
        j = (i + 1) % segments
        tris += [(i, j, segments + j), (i, segments + j, segments + i)]
        if bottom:
            tris.append((2 * segments, j, i))
        if top:
            tris.append((2 * segments + 1, segments + i, segments + j))
    return v, np.array(tris)


def _merge_meshes(meshes):
    verts, tris, off = [], [], 0
    for v, t in meshes:
        verts.append(v)
        tris.append(t + off)
        off += len(v)
    return np.vstack(verts), np.vstack(tris)


# --- builders -----------------------------------------------------------------

def make_box(size=(0.1, 0.1, 0.1), category="box") -> ObjectGeometry:
    sx, sy, sz = map(float, size)
    lo, hi = np.array([-sx / 2, -sy / 2, 0.0]), np.array([sx / 2, sy / 2, sz])
    area = 2 * (sx * sy + sx * sz + sy * sz)
    pts, nrm, parts = _box_surface(lo, hi, _spacing(area))
    v, t = _box_mesh(lo, hi)
    return ObjectGeometry(category, pts, nrm, parts, v, t, np.array([[lo, hi]]),
                          kind="box", params={"size": [sx, sy, sz], "category": category})


def make_open_box(size=(0.3, 0.3, 0.15), wall=0.006, category="open_box") -> ObjectGeometry:
    sx, sy, sz = map(float, size)
    w = float(wall)
    slabs = [
        ([-sx / 2, -sy / 2, 0.0], [sx / 2, sy / 2, w]),                # bottom
        ([-sx / 2, -sy / 2, 0.0], [-sx / 2 + w, sy / 2, sz]),          # -x wall
        ([sx / 2 - w, -sy / 2, 0.0], [sx / 2, sy / 2, sz]),            # +x wall
        ([-sx / 2 + w, -sy / 2, 0.0], [sx / 2 - w, -sy / 2 + w, sz]),  # -y wall
        ([-sx / 2 + w, sy / 2 - w, 0.0], [sx / 2 - w, sy / 2, sz]),    # +y wall
    ]
    area = sx * sy * 2 + 2 * 2 * (sx + sy) * sz
    sp = _spacing(area)
    lo, hi = np.array([-sx / 2, -sy / 2, 0.0]), np.array([sx / 2, sy / 2, sz])
    ilo, ihi = lo + [w, w, w], hi - [w, w, 0]
    outer = _box_surface(lo, hi, sp, skip=("+z",))
    inner_chunks = []
    c, h = 0.5 * (ilo + ihi), 0.5 * (ihi - ilo)
    ex, ey, ez = np.eye(3)
    inner_chunks.append(_rect(c - h[2] * ez, ex, ey, h[0], h[1], ez, sp, "inner"))
    inner_chunks.append(_rect(c + h[0] * ex, ey, ez, h[1], h[2], -ex, sp, "inner"))
    inner_chunks.append(_rect(c - h[0] * ex, ey, ez, h[1], h[2], ex, sp, "inner"))
    inner_chunks.append(_rect(c + h[1] * ey, ex, ez, h[0], h[2], -ey, sp, "inner"))
    inner_chunks.append(_rect(c - h[1] * ey, ex, ez, h[0], h[2], ey, sp, "inner"))
    pts, nrm, parts = _stack([outer] + inner_chunks)
    v, t = _merge_meshes([_box_mesh(a, b) for a, b in slabs])
    return ObjectGeometry(category, pts, nrm, parts, v, t, np.array(slabs),
                          kind="open_box", params={"size": [sx, sy, sz], "wall": w, "category": category})


def make_cylinder(radius=0.05, height=0.01, category="coaster", open_top=False) -> ObjectGeometry:
    r, h = float(radius), float(height)
    area = 2 * np.pi * r * h + np.pi * r * r * (1 if open_top else 2)
    sp = _spacing(area)
    chunks = [_cyl_side(r, 0.0, h, sp, "side"), _disk(r, 0.0, -1.0, sp, "bottom")]
    if not open_top:
        chunks.append(_disk(r, h, 1.0, sp, "top"))
    pts, nrm, parts = _stack(chunks)
    v, t = _cyl_mesh(r, 0.0, h, top=not open_top)
    return ObjectGeometry(category, pts, nrm, parts, v, t,
                          np.array([[[-r, -r, 0.0], [r, r, h]]]),
                          kind="cylinder",
                          params={"radius": r, "height": h, "category": category,
                                  "open_top": bool(open_top)})


def make_mug(radius=0.04, height=0.095, handle=0.025, category="mug") -> ObjectGeometry:
    r, h, hs = float(radius), float(height), float(handle)
    area = 2 * np.pi * r * h + np.pi * r * r + np.pi * hs * 0.5 * h
    sp = _spacing(area)
    chunks = [_cyl_side(r, 0.0, h, sp, "side"), _disk(r, 0.0, -1.0, sp, "bottom")]
    # handle: half torus on +x, tube radius hs/4, centre radius hs
    n_arc = max(6, int(round(np.pi * 0.35 * h / sp)))
    n_tube = 6
    cz, R0, rt = 0.55 * h, 0.35 * h, hs / 4
    arc = np.linspace(-np.pi / 2, np.pi / 2, n_arc)
    tube = 2 * np.pi * np.arange(n_tube) / n_tube
    aa, tt = np.meshgrid(arc, tube, indexing="ij")
    aa, tt = aa.ravel(), tt.ravel()
    centre = np.column_stack([r + R0 * np.cos(aa) * 0.6, np.zeros_like(aa), cz + R0 * np.sin(aa)])
    radial = np.column_stack([np.cos(aa), np.zeros_like(aa), np.sin(aa)])
    ey = np.tile([0.0, 1.0, 0.0], (len(aa), 1))
    nrm = np.cos(tt)[:, None] * radial + np.sin(tt)[:, None] * ey
    chunks.append((centre + rt * nrm, nrm, np.full(len(aa), PART["handle"])))
    pts, nrm_all, parts = _stack(chunks)
    v, t = _cyl_mesh(r, 0.0, h, top=False)
    boxes = np.array([[[-r, -r, 0.0], [r, r, h]],
                      [[r, -rt, cz - R0 - rt], [r + 0.6 * R0 + rt, rt, cz + R0 + rt]]])
    return ObjectGeometry(category, pts, nrm_all, parts, v, t, boxes, kind="mug",
                          params={"radius": r, "height": h, "handle": hs, "category": category})


def make_kettle(radius=0.07, height=0.16, spout=0.07, category="kettle") -> ObjectGeometry:
    r, h, s = float(radius), float(height), float(spout)
    area = 2 * np.pi * r * h + 2 * np.pi * r * r
    sp = _spacing(area)
    chunks = [_cyl_side(r, 0.0, h, sp, "side"), _disk(r, 0.0, -1.0, sp, "bottom"),
              _disk(r, h, 1.0, sp, "top")]
    # straight spout tube from the body wall, rising at 40 degrees along +x
    d = np.array([np.cos(np.radians(40)), 0.0, np.sin(np.radians(40))])
    base = np.array([r, 0.0, 0.45 * h])
    rt = 0.012
    n_len = max(3, int(round(s / (0.5 * sp))))
    n_ring = 8
    ls = np.linspace(0.0, s, n_len)
    ang = 2 * np.pi * np.arange(n_ring) / n_ring
    e1 = np.array([0.0, 1.0, 0.0])
    e2 = np.cross(d, e1)
    ll, aa = np.meshgrid(ls, ang, indexing="ij")
    ll, aa = ll.ravel(), aa.ravel()
    nrm = np.cos(aa)[:, None] * e1 + np.sin(aa)[:, None] * e2
    spout_pts = base + ll[:, None] * d + rt * nrm
    chunks.append((spout_pts, nrm, np.full(len(ll), PART["spout"])))
    tip = base + s * d
    chunks.append((tip[None] + 0.0, d[None], np.array([PART["spout"]])))
    pts, nrm_all, parts = _stack(chunks)
    body_v, body_t = _cyl_mesh(r, 0.0, h)
    # spout tube mesh
    ring0 = base + rt * (np.cos(ang)[:, None] * e1 + np.sin(ang)[:, None] * e2)
    ring1 = ring0 + s * d
    sv = np.vstack([ring0, ring1])
    st = []
    for i in range(n_ring):
        j = (i + 1) % n_ring
        st += [(i, j, n_ring + j), (i, n_ring + j, n_ring + i)]
    v, t = _merge_meshes([(body_v, body_t), (sv, np.array(st))])
    sp_lo = np.minimum(base, tip) - rt
    sp_hi = np.maximum(base, tip) + rt
    boxes = np.array([[[-r, -r, 0.0], [r, r, h]], [sp_lo, sp_hi]])
    return ObjectGeometry(category, pts, nrm_all, parts, v, t, boxes, kind="kettle",
                          params={"radius": r, "height": h, "spout": s, "category": category})


def make_sphere(radius=0.05, category="ball") -> ObjectGeometry:
    r = float(radius)
    sp = _spacing(4 * np.pi * r * r)
    n_lat = max(4, int(round(np.pi * r / sp)))
    pts = [[0.0, 0.0, -1.0], [0.0, 0.0, 1.0]]
    for i in range(1, n_lat):
        th = np.pi * i / n_lat
        na = max(6, int(round(2 * np.pi * r * np.sin(th) / sp)))
        a = 2 * np.pi * np.arange(na) / na
        pts.extend(np.column_stack([np.sin(th) * np.cos(a), np.sin(th) * np.sin(a),
                                    np.full(na, -np.cos(th))]))
    nrm = np.asarray(pts)
    points = nrm * r + [0.0, 0.0, r]
    # UV mesh
    seg, rings = 24, 12
    verts = [[0.0, 0.0, -r], [0.0, 0.0, r]]
    for i in range(1, rings):
        th = np.pi * i / rings
        a = 2 * np.pi * np.arange(seg) / seg
        verts.extend(np.column_stack([r * np.sin(th) * np.cos(a), r * np.sin(th) * np.sin(a),
                                      np.full(seg, -r * np.cos(th))]))
    verts = np.asarray(verts) + [0.0, 0.0, r]
    tris = []
    ring = lambda i, k: 2 + (i - 1) * seg + (k % seg)  # noqa: E731
    for k in range(seg):
        tris.append((0, ring(1, k + 1), ring(1, k)))
        tris.append((1, ring(rings - 1, k), ring(rings - 1, k + 1)))
    for i in range(1, rings - 1):
        for k in range(seg):
            tris += [(ring(i, k), ring(i, k + 1), ring(i + 1, k + 1)),
                     (ring(i, k), ring(i + 1, k + 1), ring(i + 1, k))]
    return ObjectGeometry(category, points, nrm, np.full(len(points), PART["side"]),
                          verts, np.array(tris), kind="sphere",
                          params={"radius": r, "category": category})


def make_cabinet(size=(0.4, 0.4, 0.3), travel=0.25, category="cabinet") -> ObjectGeometry:
    """Box body with one drawer sliding along +x (prismatic)."""
    sx, sy, sz = map(float, size)
    travel = float(travel)
    lo, hi = np.array([-sx / 2, -sy / 2, 0.0]), np.array([sx / 2, sy / 2, sz])
    dlo = np.array([-sx / 2 + 0.02, -sy / 2 + 0.03, 0.35 * sz])
    dhi = np.array([sx / 2 + 0.01, sy / 2 - 0.03, 0.75 * sz])
    area = 2 * (sx * sy + sx * sz + sy * sz)
    sp = _spacing(area, TARGET_POINTS // 2)
    body = _box_surface(lo, hi, sp, part="base", top_part="base", bottom_part="base")
    drawer = _box_surface(dlo, dhi, sp, part="drawer", top_part="drawer", bottom_part="drawer")
    pts, nrm, parts = _stack([body, drawer])
    nb = len(body[0])
    v, t = _merge_meshes([_box_mesh(lo, hi), _box_mesh(dlo, dhi)])
    link = Link("drawer", "drawer", "prismatic", [1.0, 0.0, 0.0], [0.0, 0.0, 0.0],
                (0.0, travel), np.arange(nb, len(pts)), box_index=(1,))
    return ObjectGeometry(category, pts, nrm, parts, v, t, np.array([[lo, hi], [dlo, dhi]]),
                          links=(link,), kind="cabinet",
                          params={"size": [sx, sy, sz], "travel": travel, "category": category})


def make_laptop(size=(0.3, 0.22, 0.02), max_angle=2.1, category="laptop") -> ObjectGeometry:
    """Base slab plus a lid hinged along the back edge (revolute about -y)."""
    sx, sy, sz = map(float, size)
    lid_t = 0.5 * sz
    blo, bhi = np.array([-sx / 2, -sy / 2, 0.0]), np.array([sx / 2, sy / 2, sz])
    llo, lhi = np.array([-sx / 2, -sy / 2, sz]), np.array([sx / 2, sy / 2, sz + lid_t])
    area = 2 * sx * sy * 2
    sp = _spacing(area)
    base = _box_surface(blo, bhi, sp, part="base", top_part="base", bottom_part="base")
    lid = _box_surface(llo, lhi, sp, part="lid", top_part="lid", bottom_part="lid")
    pts, nrm, parts = _stack([base, lid])
    nb = len(base[0])
    v, t = _merge_meshes([_box_mesh(blo, bhi), _box_mesh(llo, lhi)])
    link = Link("lid", "lid", "revolute", [0.0, -1.0, 0.0], [-sx / 2, 0.0, sz],
                (0.0, float(max_angle)), np.arange(nb, len(pts)), box_index=(1,))
    return ObjectGeometry(category, pts, nrm, parts, v, t, np.array([[blo, bhi], [llo, lhi]]),
                          links=(link,), kind="laptop",
                          params={"size": [sx, sy, sz], "max_angle": float(max_angle),
                                  "category": category})


BUILDERS = {
    "box": make_box,
    "open_box": make_open_box,
    "cylinder": make_cylinder,
    "mug": make_mug,
    "kettle": make_kettle,
    "sphere": make_sphere,
    "cabinet": make_cabinet,
    "laptop": make_laptop,
}


def build(kind: str, params: dict) -> ObjectGeometry:
    if kind not in BUILDERS:
        raise KeyError(f"unknown asset kind {kind!r}")
    return BUILDERS[kind](**params)


def from_ref(ref: dict) -> ObjectGeometry:
    return build(ref["kind"], ref["params"])
