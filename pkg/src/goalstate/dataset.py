"""Seeded procedural dataset emission.

Each sample draws its own RNG stream from ``(rng_seed, sample_index)``, so a
sample's bytes never depend on which worker produced it or in what order.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .assets import ObjectGeometry, build
from .cpca import CPCAParams, DemoRecord, cpca_generate, detect_contacts
from .errors import GoalStateError, NoContacts, SamplingExhausted
from .geometry import PointCloud, RigidTransform, write_fpc
from .scene import (COLLISION_MARGIN, RelationKind, RelationParams, SceneObject, SceneState,
                    align_joint_state, collision_free, relation_holds, sample_relation_pose)

MOVING_ID = "A"
PROXIMAL_ID = "B"
PLACEMENT_ATTEMPTS = 2000


@dataclass(frozen=True)
class AssetSpec:
    """Procedural asset family: ``params`` values are fixed numbers or ``[lo, hi]`` ranges."""
    kind: str
    params: dict

    def nominal(self) -> dict:
        return {k: (0.5 * (v[0] + v[1]) if _is_range(v) else v) for k, v in self.params.items()}

    def draw(self, rng: np.random.Generator) -> dict:
        out = {}
        for k in sorted(self.params):
            v = self.params[k]
            out[k] = float(rng.uniform(v[0], v[1])) if _is_range(v) else v
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "AssetSpec":
        return cls(d["kind"], dict(d.get("params", {})))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": self.params}


def _is_range(v) -> bool:
    return isinstance(v, (list, tuple)) and len(v) == 2 and all(
        isinstance(x, (int, float)) for x in v)


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    relation: str
    moving: AssetSpec
    proximal: Optional[AssetSpec] = None
    instruction: str = "place the {A} {rel} the {B}"
    demo_joint: float = 0.8            # normalized demo value for Joint tasks
    link: Optional[str] = None         # InsideLink target link
    link_open: float = 0.8             # normalized opening of that link in the initial scene
    heldout_fraction: float = 0.2
    placement_extent: float = 0.3
    demo_seed: int = 0
    contact_threshold: float = 0.01

    def __post_init__(self):
        kind = RelationKind(self.relation)
        if kind is not RelationKind.JOINT and self.proximal is None:
            raise ValueError(f"{kind.value} tasks need a proximal asset")
        if kind is RelationKind.INSIDE_LINK and self.link is None:
            raise ValueError("InsideLink tasks need a link name")
        if not 0.0 <= self.heldout_fraction < 1.0:
            raise ValueError("heldout_fraction must lie in [0, 1)")

    @property
    def kind(self) -> RelationKind:
        return RelationKind(self.relation)

    @classmethod
    def from_dict(cls, d: dict) -> "TaskSpec":
        d = dict(d)
        d["moving"] = AssetSpec.from_dict(d["moving"])
        if d.get("proximal") is not None:
            d["proximal"] = AssetSpec.from_dict(d["proximal"])
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown task spec keys: {sorted(extra)}")
        return cls(**d)

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__}
        out["moving"] = self.moving.to_dict()
        out["proximal"] = None if self.proximal is None else self.proximal.to_dict()
        return out


RELATION_WORDS = {"OnTop": "on", "Inside": "in", "InsideLink": "in", "Near": "next to",
                  "Joint": "open"}

BUILTIN_TASKS = {
    "mug_on_coaster": {
        "task_id": "mug_on_coaster", "relation": "OnTop",
        "moving": {"kind": "mug", "params": {"radius": [0.032, 0.045], "height": [0.08, 0.11],
                                             "handle": 0.025}},
        "proximal": {"kind": "cylinder", "params": {"radius": [0.05, 0.07],
                                                    "height": [0.008, 0.015]}},
    },
    "block_on_box": {
        "task_id": "block_on_box", "relation": "OnTop",
        "moving": {"kind": "box", "params": {"size": [0.04, 0.04, 0.04], "category": "block"}},
        "proximal": {"kind": "box", "params": {"size": [0.16, 0.12, 0.06], "category": "crate"}},
    },
    "kettle_near_cup": {
        "task_id": "kettle_near_cup", "relation": "Near", "contact_threshold": 0.03,
        "moving": {"kind": "kettle", "params": {"radius": [0.06, 0.075], "height": 0.16}},
        "proximal": {"kind": "mug", "params": {"radius": [0.03, 0.04], "height": 0.08}},
    },
    "block_in_tray": {
        "task_id": "block_in_tray", "relation": "Inside",
        "moving": {"kind": "box", "params": {"size": [0.04, 0.04, 0.04], "category": "block"}},
        "proximal": {"kind": "open_box", "params": {"size": [0.24, 0.2, 0.08], "wall": 0.006,
                                                    "category": "tray"}},
    },
    "open_drawer": {
        "task_id": "open_drawer", "relation": "Joint", "instruction": "open the {A}",
        "moving": {"kind": "cabinet", "params": {"size": [0.3, 0.3, 0.25],
                                                 "travel": [0.15, 0.25]}},
    },
    "open_laptop": {
        "task_id": "open_laptop", "relation": "Joint", "instruction": "open the {A}",
        "demo_joint": 0.75,
        "moving": {"kind": "laptop", "params": {"size": [0.3, 0.22, 0.02],
                                                "max_angle": [1.8, 2.4]}},
    },
}


def builtin_task(name: str) -> TaskSpec:
    if name not in BUILTIN_TASKS:
        raise KeyError(f"unknown task {name!r}; known: {sorted(BUILTIN_TASKS)}")
    return TaskSpec.from_dict(BUILTIN_TASKS[name])


@dataclass(frozen=True)
class TaskSample:
    task_id: str
    instruction: str
    initial: SceneState
    moving_id: str
    relation: str
    goal_pose: RigidTransform
    goal_joints: Optional[dict] = None
    proximal_id: Optional[str] = None
    sample_index: int = 0
    split: str = "seen"
    goal_cloud: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.goal_cloud is None:
            object.__setattr__(self, "goal_cloud", self.expected_goal_cloud())

    @property
    def moving(self) -> SceneObject:
        return self.initial[self.moving_id]

    def expected_goal_cloud(self) -> np.ndarray:
        m = self.moving
        joints = dict(m.joints)
        if self.goal_joints:
            joints.update(self.goal_joints)
        return self.goal_pose.apply(m.geometry.posed_points(joints))

    def object_cloud(self) -> np.ndarray:
        """Moving object's surface points in the initial scene, world frame."""
        return self.moving.world_points()

    def background(self) -> tuple:
        """Concatenated world points of every other object, with per-point categories."""
        pts, cats = [], []
        for o in self.initial.objects:
            if o.id == self.moving_id:
                continue
            p = o.world_points()
            pts.append(p)
            cats.extend([o.category] * len(p))
        if not pts:
            return np.zeros((0, 3)), []
        return np.vstack(pts), cats

    def goal_state(self) -> SceneState:
        m = self.moving
        joints = dict(m.joints)
        if self.goal_joints:
            joints.update(self.goal_joints)
        return self.initial.with_object(SceneObject(m.id, m.geometry, self.goal_pose, joints))

    def goal_satisfied(self, pose: Optional[RigidTransform] = None,
                       params: RelationParams = RelationParams()) -> bool:
        """Relation predicate evaluated with the moving object at ``pose`` (default: goal)."""
        kind = RelationKind(self.relation)
        if kind is RelationKind.JOINT:
            return self.goal_joints is not None
        m = self.moving
        cand = SceneObject(m.id, m.geometry, pose or self.goal_pose, m.joints)
        return relation_holds(kind, cand, self.initial[self.proximal_id], params)

    def to_dict(self) -> dict:
        return {"task_id": self.task_id, "instruction": self.instruction,
                "sample_index": self.sample_index, "split": self.split,
                "relation": self.relation, "moving_id": self.moving_id,
                "proximal_id": self.proximal_id, "initial": self.initial.to_dict(),
                "goal_pose": self.goal_pose.to_dict(),
                "goal_joints": None if self.goal_joints is None else
                {k: float(v) for k, v in sorted(self.goal_joints.items())}}

    @classmethod
    def from_dict(cls, d: dict) -> "TaskSample":
        return cls(d["task_id"], d["instruction"], SceneState.from_dict(d["initial"]),
                   d["moving_id"], d["relation"], RigidTransform.from_dict(d["goal_pose"]),
                   d.get("goal_joints"), d.get("proximal_id"), int(d.get("sample_index", 0)),
                   d.get("split", "seen"))


# --- generation --------------------------------------------------------------------

def sample_seed(rng_seed: int, index: int) -> int:
    """Independent 63-bit seed for one sample, a pure function of (rng_seed, index)."""
    state = np.random.SeedSequence([int(rng_seed), int(index)]).generate_state(2, np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


def _instance(spec: AssetSpec, rng) -> ObjectGeometry:
    return build(spec.kind, spec.draw(rng))


def _place(geom: ObjectGeometry, oid: str, scene: SceneState, rng, extent: float,
           joints: Optional[dict] = None, goal_joints: Optional[dict] = None) -> SceneObject:
    """Random yaw/position on the table, free at ``joints`` and, if given, ``goal_joints``."""
    for _ in range(PLACEMENT_ATTEMPTS):
        xy = rng.uniform(-extent, extent, size=2)
        yaw = rng.uniform(0.0, 2.0 * np.pi)
        pose = RigidTransform.from_yaw(yaw, [xy[0], xy[1], 0.0])
        obj = SceneObject(oid, geom, pose, dict(joints or {}))
        if not collision_free(scene, obj, COLLISION_MARGIN):
            continue
        if goal_joints is None or collision_free(
                scene, SceneObject(oid, geom, pose, {**obj.joints, **goal_joints}),
                COLLISION_MARGIN):
            return obj
    raise GoalStateError(f"could not place {oid!r} collision-free")


DEMO_ATTEMPTS = 50


def build_demo(task: TaskSpec) -> DemoRecord:
    """Demonstration at nominal asset parameters: B at the origin, A sampled into the relation."""
    A = build(task.moving.kind, task.moving.nominal())
    B = build(task.proximal.kind, task.proximal.nominal())
    b_obj = SceneObject(PROXIMAL_ID, B, RigidTransform.identity())
    a_start = SceneObject(MOVING_ID, A, RigidTransform.from_translation([0.4, 0.4, 0.0]))
    scene = SceneState((a_start, b_obj))
    params = RelationParams(near_max=min(RelationParams().near_max, task.contact_threshold))
    for attempt in range(DEMO_ATTEMPTS):
        seed = task.demo_seed if attempt == 0 else sample_seed(task.demo_seed, attempt)
        goal = sample_relation_pose(task.kind, A, b_obj, scene, seed, params, moving_id=MOVING_ID)
        try:
            # a pose that satisfies the predicate may still have no normal-ray contact
            detect_contacts(SceneObject(MOVING_ID, A, goal), b_obj, task.contact_threshold)
        except NoContacts:
            continue
        return DemoRecord(scene, MOVING_ID, PROXIMAL_ID, goal)
    raise SamplingExhausted(f"no demo pose with contacts after {DEMO_ATTEMPTS} attempts")


def _instruction(task: TaskSpec, a: str, b: Optional[str]) -> str:
    return task.instruction.format(A=a, B=b or "", rel=RELATION_WORDS[task.relation])


def generate_sample(task: TaskSpec, rng_seed: int, index: int, count: int,
                    demo: Optional[DemoRecord] = None) -> TaskSample:
    """One sample; raises GoalStateError subclasses on generation failure."""
    rng = np.random.default_rng(sample_seed(rng_seed, index))
    split = "unseen" if index >= count - int(round(task.heldout_fraction * count)) else "seen"
    kind = task.kind
    A = _instance(task.moving, rng)
    scene = SceneState(())

    if kind is RelationKind.JOINT:
        nominal = build(task.moving.kind, task.moving.nominal())
        demo_joints = {lk.name: lk.denormalized(task.demo_joint) for lk in nominal.links}
        goal_joints = align_joint_state(nominal, demo_joints, A)
        a_obj = _place(A, MOVING_ID, scene, rng, task.placement_extent, A.default_joints(),
                       goal_joints)
        initial = SceneState((a_obj,))
        return TaskSample(task.task_id, _instruction(task, A.category, None), initial, MOVING_ID,
                          kind.value, a_obj.pose, goal_joints, None, index, split)

    B = _instance(task.proximal, rng)
    b_joints = {}
    if kind is RelationKind.INSIDE_LINK:
        b_joints = {task.link: B.link(task.link).denormalized(task.link_open)}
    b_obj = _place(B, PROXIMAL_ID, scene, rng, task.placement_extent, b_joints)
    a_obj = _place(A, MOVING_ID, SceneState((b_obj,)), rng, task.placement_extent + 0.1)
    initial = SceneState((a_obj, b_obj))
    instr = _instruction(task, A.category, B.category)

    if kind in (RelationKind.ON_TOP, RelationKind.NEAR):
        demo = demo or build_demo(task)
        params = CPCAParams(contact_threshold=task.contact_threshold)
        goal = cpca_generate(demo, initial, params).transform
    else:
        seed = int(rng.integers(0, 2**63 - 1))
        goal = sample_relation_pose(kind, A, b_obj, initial, seed,
                                    RelationParams(link=task.link), moving_id=MOVING_ID)
    return TaskSample(task.task_id, instr, initial, MOVING_ID, kind.value, goal, None,
                      PROXIMAL_ID, index, split)


def _sample_files(index: int) -> dict:
    stem = f"samples/{index:05d}"
    return {"sample": f"{stem}.json", "object": f"{stem}_object.fpc",
            "background": f"{stem}_background.fpc", "goal": f"{stem}_goal.fpc"}


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _emit(task: TaskSpec, rng_seed: int, index: int, count: int, out: Path,
          demo: Optional[DemoRecord]) -> dict:
    rec = {"task_id": task.task_id, "sample_index": index, "seed": sample_seed(rng_seed, index),
           "relation": task.relation,
           "categories": {"moving": None, "proximal": None}}
    try:
        s = generate_sample(task, rng_seed, index, count, demo)
    except GoalStateError as exc:
        rec.update(status=f"failed:{type(exc).__name__}", files={}, split=None)
        return rec
    rec["categories"] = {"moving": s.moving.category,
                         "proximal": None if s.proximal_id is None
                         else s.initial[s.proximal_id].category}
    rec["split"] = s.split
    if not s.goal_satisfied():
        rec.update(status="rejected:predicate", files={})
        return rec
    if not collision_free(s.initial.without(s.moving_id),
                          s.goal_state()[s.moving_id], COLLISION_MARGIN):
        rec.update(status="rejected:collision", files={})
        return rec
    files = _sample_files(index)
    (out / files["sample"]).write_text(_dumps(s.to_dict()) + "\n")
    write_fpc(out / files["object"], PointCloud(s.object_cloud()))
    bg, cats = s.background()
    if len(bg):
        names = sorted(set(cats))
        ids = np.array([names.index(c) for c in cats], dtype=np.float64)
        write_fpc(out / files["background"], PointCloud(bg, ids[:, None]))
    else:
        del files["background"]
    write_fpc(out / files["goal"], PointCloud(s.goal_cloud))
    rec.update(status="ok", files=files)
    return rec


def generate_dataset(task: TaskSpec, count: int, rng_seed: int, out_dir,
                     threads: int = 1) -> list:
    """Write ``count`` samples plus ``manifest.jsonl`` under ``out_dir``; returns the records.

    Output bytes are a pure function of ``(task, count, rng_seed)``; ``threads``
    only changes how many samples are produced concurrently.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    out = Path(out_dir)
    (out / "samples").mkdir(parents=True, exist_ok=True)
    demo = None
    if task.kind in (RelationKind.ON_TOP, RelationKind.NEAR):
        demo = build_demo(task)
        (out / "demo.json").write_text(_dumps(demo.to_dict()) + "\n")
    (out / "task.json").write_text(_dumps(task.to_dict()) + "\n")

    def work(i):
        return _emit(task, rng_seed, i, count, out, demo)

    if threads <= 1:
        records = [work(i) for i in range(count)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(work, range(count)))
    with open(out / "manifest.jsonl", "w") as fh:
        for rec in records:
            fh.write(_dumps(rec) + "\n")
    return records


# --- loading ---------------------------------------------------------------------

def read_manifest(path) -> list:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.jsonl"
    records = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def load_samples(manifest_path, split: Optional[str] = None) -> list:
    """TaskSamples listed as ok in a manifest, geometry regenerated from references."""
    manifest_path = Path(manifest_path)
    root = manifest_path if manifest_path.is_dir() else manifest_path.parent
    out = []
    for rec in read_manifest(manifest_path):
        if rec.get("status") != "ok":
            continue
        if split is not None and rec.get("split") != split:
            continue
        d = json.loads((root / rec["files"]["sample"]).read_text())
        out.append(TaskSample.from_dict(d))
    return out
