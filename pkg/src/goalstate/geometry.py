"""Point-cloud types and exact geometric primitives.

All coordinates are meters. Values are immutable once constructed: arrays are
copied and marked read-only, so instances can be shared freely.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from . import kernels
from .errors import DegenerateInput, FormatError, SizeMismatch


def _frozen(arr, dtype=np.float64):
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray
    features: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = _frozen(self.points).reshape(-1, 3) if np.size(self.points) else None
        if pts is None or pts.shape[0] < 1:
            raise SizeMismatch("point cloud needs at least one point")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        object.__setattr__(self, "points", pts)
        if self.features is not None:
            feats = _frozen(self.features)
            if feats.ndim == 1:
                feats = feats.reshape(-1, 1) if feats.size else feats.reshape(pts.shape[0], 0)
            if feats.shape[0] != pts.shape[0]:
                raise SizeMismatch(
                    f"{feats.shape[0]} feature rows for {pts.shape[0]} points")
            object.__setattr__(self, "features", feats)

    def __len__(self):
        return self.points.shape[0]

    @property
    def feature_width(self) -> int:
        return 0 if self.features is None else self.features.shape[1]

    def with_points(self, points) -> "PointCloud":
        return PointCloud(points, self.features)

    def subset(self, index) -> "PointCloud":
        feats = None if self.features is None else self.features[index]
        return PointCloud(self.points[index], feats)

    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = _frozen(self.rotation).reshape(3, 3)
        t = _frozen(self.translation).reshape(3)
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise ValueError("transform entries must be finite")
        if np.linalg.norm(R.T @ R - np.eye(3)) > 1e-9 or abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ValueError("rotation must be proper orthonormal")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_translation(cls, t) -> "RigidTransform":
        return cls(np.eye(3), t)

    @classmethod
    def from_quaternion(cls, wxyz, translation) -> "RigidTransform":
        w, x, y, z = wxyz
        return cls(Rotation.from_quat([x, y, z, w]).as_matrix(), translation)

    @classmethod
    def from_yaw(cls, yaw: float, translation) -> "RigidTransform":
        c, s = np.cos(yaw), np.sin(yaw)
        return cls(np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]), translation)

    @classmethod
    def from_matrix(cls, m) -> "RigidTransform":
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    def quaternion(self) -> np.ndarray:
        """Unit quaternion (w, x, y, z) with non-negative w."""
        x, y, z, w = Rotation.from_matrix(self.rotation).as_quat()
        q = np.array([w, x, y, z])
        return -q if q[0] < 0 else q

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    def apply(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def to_dict(self) -> dict:
        return {"quaternion_wxyz": [float(v) for v in self.quaternion()],
                "translation": [float(v) for v in self.translation]}

    @classmethod
    def from_dict(cls, d: dict) -> "RigidTransform":
        if "rotation" in d:
            return cls(d["rotation"], d["translation"])
        return cls.from_quaternion(d["quaternion_wxyz"], d["translation"])


@dataclass(frozen=True)
class CorrespondenceSet:
    """``pairs[k] = (k, j(k))`` for every source index ``k``."""
    targets: np.ndarray
    target_size: int

    def __post_init__(self):
        tg = _frozen(self.targets, dtype=np.int64).reshape(-1)
        if tg.size and (tg.min() < 0 or tg.max() >= self.target_size):
            raise IndexError("correspondence target index out of bounds")
        object.__setattr__(self, "targets", tg)

    @property
    def source_size(self) -> int:
        return self.targets.shape[0]

    @property
    def pairs(self) -> list[tuple[int, int]]:
        return [(i, int(j)) for i, j in enumerate(self.targets)]

    def __getitem__(self, i):
        return self.targets[i]


@dataclass(frozen=True)
class Aabb:
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        lo = _frozen(self.min).reshape(3)
        hi = _frozen(self.max).reshape(3)
        if np.any(lo > hi):
            raise ValueError("Aabb min must not exceed max")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @property
    def size(self) -> np.ndarray:
        return self.max - self.min

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.min + self.max)

    def expanded(self, margin: float) -> "Aabb":
        m = np.broadcast_to(np.asarray(margin, dtype=np.float64), (3,))
        return Aabb(self.min - m, self.max + m)

    def contains(self, other: "Aabb", tol: float = 0.0) -> bool:
        return bool(np.all(other.min >= self.min - tol) and np.all(other.max <= self.max + tol))

    def to_dict(self) -> dict:
        return {"min": [float(v) for v in self.min], "max": [float(v) for v in self.max]}

    @classmethod
    def from_dict(cls, d: dict) -> "Aabb":
        return cls(d["min"], d["max"])


def _as_points(cloud) -> np.ndarray:
    return cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)


def kabsch_fit(source, target, weights: Optional[Sequence[float]] = None) -> RigidTransform:
    """Weighted least-squares rigid transform mapping ``source`` onto ``target``.

    Minimizes ``sum w_i |R s_i + t - t_i|^2`` over proper rotations; the
    reflection case is removed by flipping the smallest singular direction.
    """
    src = _as_points(source)
    tgt = _as_points(target)
    if src.shape != tgt.shape:
        raise SizeMismatch(f"source has {src.shape[0]} points, target {tgt.shape[0]}")
    if weights is None:
        w = np.ones(src.shape[0])
    else:
        w = np.asarray(weights, dtype=np.float64).reshape(-1)
        if w.shape[0] != src.shape[0]:
            raise SizeMismatch("one weight per point required")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and non-negative")
    wsum = w.sum()
    if src.shape[0] < 3 or wsum <= 0:
        raise DegenerateInput("need at least 3 weighted points")
    mu_s = (w @ src) / wsum
    mu_t = (w @ tgt) / wsum
    H = (src - mu_s).T @ ((tgt - mu_t) * w[:, None])
    U, S, Vt = np.linalg.svd(H)
    if S[0] <= 0 or S[1] <= 1e-12 * S[0]:
        raise DegenerateInput("points are collinear or coincident")
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    D = np.diag([1.0, 1.0, d if d != 0 else 1.0])
    R = Vt.T @ D @ U.T
    # re-orthonormalize: SVD output is orthonormal to ~1e-15 already, this keeps the
    # type invariant robust when inputs are badly scaled
    u, _, vt = np.linalg.svd(R)
    R = u @ vt
    return RigidTransform(R, mu_t - R @ mu_s)


def nn_correspondences(deformed_source, target) -> CorrespondenceSet:
    """Nearest target point for every source point, on coordinates only."""
    src = _as_points(deformed_source)
    tgt = _as_points(target)
    if src.shape[0] == 0 or tgt.shape[0] == 0:
        raise SizeMismatch("both clouds must be non-empty")
    idx, _ = kernels.nearest_neighbors(src, tgt)
    return CorrespondenceSet(idx, tgt.shape[0])


def self_distance_matrix(cloud) -> np.ndarray:
    pts = _as_points(cloud)
    return kernels.pairwise_sqdist(pts, pts)


def pce(predicted, truth) -> float:
    """Mean over predicted points of the distance to the nearest truth point."""
    _, d2 = kernels.nearest_neighbors(_as_points(predicted), _as_points(truth))
    return float(np.mean(np.sqrt(d2)))


def apply_rigid(cloud: PointCloud, transform: RigidTransform) -> PointCloud:
    return cloud.with_points(transform.apply(cloud.points))


def aabb_of(cloud) -> Aabb:
    pts = _as_points(cloud)
    return Aabb(pts.min(axis=0), pts.max(axis=0))


# --- FPC1 binary point-cloud files -------------------------------------------

_FPC_MAGIC = b"FPC1"
_FPC_HEADER = struct.Struct("<4sII")


def encode_fpc(cloud: PointCloud) -> bytes:
    n, d = len(cloud), cloud.feature_width
    parts = [_FPC_HEADER.pack(_FPC_MAGIC, n, d),
             np.ascontiguousarray(cloud.points, dtype="<f4").tobytes()]
    if d:
        parts.append(np.ascontiguousarray(cloud.features, dtype="<f4").tobytes())
    return b"".join(parts)


def decode_fpc(data: bytes) -> PointCloud:
    if len(data) < _FPC_HEADER.size:
        raise FormatError("truncated FPC1 header")
    magic, n, d = _FPC_HEADER.unpack_from(data)
    if magic != _FPC_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {_FPC_MAGIC!r}")
    need = _FPC_HEADER.size + 4 * n * (3 + d)
    if len(data) != need:
        raise FormatError(f"FPC1 payload is {len(data)} bytes, expected {need}")
    off = _FPC_HEADER.size
    pts = np.frombuffer(data, dtype="<f4", count=3 * n, offset=off).reshape(n, 3)
    feats = None
    if d:
        feats = np.frombuffer(data, dtype="<f4", count=n * d,
                              offset=off + 12 * n).reshape(n, d)
    return PointCloud(pts.astype(np.float64),
                      None if feats is None else feats.astype(np.float64))


def write_fpc(path, cloud: PointCloud) -> None:
    Path(path).write_bytes(encode_fpc(cloud))


def read_fpc(path) -> PointCloud:
    return decode_fpc(Path(path).read_bytes())
