"""Frozen name/instruction embeddings and the conditioning bundle fed to the predictor."""
from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import WidthMismatch

EMBED_WIDTH = 32
COORD_SCALE = 10.0


class Vocabulary:
    """Deterministic word -> vector table; each row is seeded by a hash of the word."""

    def __init__(self, width: int = EMBED_WIDTH, salt: str = "goalstate"):
        self.width = int(width)
        self.salt = salt
        self._cache = {}

    def row(self, word: str) -> np.ndarray:
        word = word.lower()
        if word not in self._cache:
            digest = hashlib.sha256(f"{self.salt}:{word}".encode()).digest()
            rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
            v = rng.standard_normal(self.width) / np.sqrt(self.width)
            v.setflags(write=False)
            self._cache[word] = v
        return self._cache[word]

    def name(self, category: str) -> np.ndarray:
        return self.row(category)

    def text(self, sentence: str) -> np.ndarray:
        tokens = re.findall(r"[a-z0-9_]+", sentence.lower())
        if not tokens:
            return np.zeros(self.width)
        return np.mean([self.row(t) for t in tokens], axis=0)


@dataclass(frozen=True)
class Frame:
    """World <-> model coordinates: model = (world - origin) * scale."""
    origin: np.ndarray
    scale: float = COORD_SCALE

    def to_model(self, p) -> np.ndarray:
        return (np.asarray(p, dtype=np.float64) - self.origin) * self.scale

    def to_world(self, q) -> np.ndarray:
        return np.asarray(q, dtype=np.float64) / self.scale + self.origin


@dataclass(frozen=True)
class ConditionBundle:
    object_points: np.ndarray        # N x 3, model coordinates
    object_features: np.ndarray      # N x d_n
    background_points: np.ndarray    # M x 3 (M may be 0)
    background_features: np.ndarray  # M x d_n
    instruction: np.ndarray          # d_c

    def __post_init__(self):
        op = np.asarray(self.object_points, dtype=np.float64).reshape(-1, 3)
        of = np.asarray(self.object_features, dtype=np.float64).reshape(op.shape[0], -1)
        bp = np.asarray(self.background_points, dtype=np.float64).reshape(-1, 3)
        bf = np.asarray(self.background_features, dtype=np.float64).reshape(bp.shape[0], -1) \
            if bp.shape[0] else np.zeros((0, of.shape[1]))
        if bp.shape[0] and bf.shape[1] != of.shape[1]:
            raise WidthMismatch("object and background name features differ in width")
        for name, a in (("object_points", op), ("object_features", of),
                        ("background_points", bp), ("background_features", bf),
                        ("instruction", np.asarray(self.instruction, dtype=np.float64))):
            object.__setattr__(self, name, a)

    @property
    def n_points(self) -> int:
        return self.object_points.shape[0]

    def translated(self, offset) -> "ConditionBundle":
        off = np.asarray(offset, dtype=np.float64)
        return ConditionBundle(self.object_points + off, self.object_features,
                               self.background_points + off if len(self.background_points)
                               else self.background_points,
                               self.background_features, self.instruction)


def farthest_point_indices(points: np.ndarray, n: int) -> np.ndarray:
    """Greedy farthest-point subsample starting at index 0; ties go to the lower index."""
    pts = np.asarray(points, dtype=np.float64)
    if n >= len(pts):
        return np.arange(len(pts))
    idx = np.empty(n, dtype=np.int64)
    idx[0] = 0
    d = np.sum((pts - pts[0]) ** 2, axis=1)
    for k in range(1, n):
        idx[k] = int(np.argmax(d))
        d = np.minimum(d, np.sum((pts - pts[idx[k]]) ** 2, axis=1))
    return np.sort(idx)


@dataclass(frozen=True)
class TrainingItem:
    cond: ConditionBundle
    x0: np.ndarray          # N x 3 goal cloud, model coordinates
    frame: Frame
    index: np.ndarray       # rows of the moving object's cloud kept in cond/x0


def make_item(sample, vocab: Vocabulary, n_points: Optional[int] = 128,
              scale: float = COORD_SCALE) -> TrainingItem:
    """Condition and supervision for one TaskSample.

    The frame origin is the background centroid (the moving object's centroid
    when the scene has no other objects), so translating the whole scene leaves
    the model inputs unchanged.
    """
    obj_world = sample.object_cloud()
    local = sample.moving.local_points()
    index = farthest_point_indices(local, n_points) if n_points else np.arange(len(local))
    bg, cats = sample.background()
    origin = bg.mean(axis=0) if len(bg) else obj_world.mean(axis=0)
    frame = Frame(origin, scale)
    name = vocab.name(sample.moving.category)
    obj_feats = np.tile(name, (len(index), 1))
    bg_feats = np.array([vocab.name(c) for c in cats]) if len(bg) else np.zeros((0, vocab.width))
    cond = ConditionBundle(frame.to_model(obj_world[index]), obj_feats,
                           frame.to_model(bg) if len(bg) else bg, bg_feats,
                           vocab.text(sample.instruction))
    return TrainingItem(cond, frame.to_model(sample.goal_cloud[index]), frame, index)
