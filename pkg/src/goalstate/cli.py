"""Command-line entry point: ``goalstate {gen,cpca,train,sample,eval,e2e}``.

Exit codes: 0 ok, 2 usage error, 3 data error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import fields, replace
from pathlib import Path

from .cpca import CPCAParams, CollisionParams, DemoRecord, cpca_generate
from .dataset import TaskSpec, builtin_task, generate_dataset, load_samples, sample_seed
from .diffusion.checkpoint import load_checkpoint, save_checkpoint
from .diffusion.conditioning import Vocabulary, make_item
from .diffusion.network import ModelConfig, NoisePredictor
from .diffusion.sampling import ddim_sample, extract_goal_transform
from .diffusion.training import TrainConfig, train, write_loss_csv
from .errors import (DegenerateInput, FormatError, GoalStateError, NonFiniteLoss,
                     ZeroDisplacement)
from .evaluation import EmptySelection, EvalParams, evaluate, write_report
from .geometry import PointCloud, kabsch_fit, write_fpc
from .planning import PlannerParams, plan_placement, push_primitive
from .registration import CPDParams
from .scene import SceneState

log = logging.getLogger("goalstate")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
CONFIG_KEYS = {"task", "count", "n_points", "model", "train", "eval", "planner", "cpca"}


class UsageError(GoalStateError, ValueError):
    """Bad command-line arguments or configuration."""


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, (UsageError, EmptySelection)):
        return EXIT_USAGE
    if isinstance(exc, (NonFiniteLoss, FloatingPointError, DegenerateInput)):
        return EXIT_NUMERIC
    return EXIT_DATA


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


# --- configuration ---------------------------------------------------------------

def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise UsageError("config must be a JSON object")
    unknown = set(cfg) - CONFIG_KEYS
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    return cfg


def fill(cls, section, **overrides):
    """Dataclass from a config section; unknown keys are a usage error."""
    section = dict(section or {})
    names = {f.name for f in fields(cls)}
    unknown = set(section) - names
    if unknown:
        raise UsageError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    section.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return cls(**section)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad {cls.__name__}: {exc}") from exc


def resolve_task(cfg: dict, name) -> TaskSpec:
    spec = name if name is not None else cfg.get("task")
    if spec is None:
        raise UsageError("no task given (use --task or a 'task' config key)")
    try:
        if isinstance(spec, str):
            if Path(spec).suffix == ".json" and Path(spec).exists():
                return TaskSpec.from_dict(json.loads(Path(spec).read_text()))
            return builtin_task(spec)
        return TaskSpec.from_dict(spec)
    except (KeyError, ValueError, TypeError) as exc:
        raise UsageError(f"invalid task spec: {exc}") from exc


def cpca_params(cfg: dict) -> CPCAParams:
    sec = dict(cfg.get("cpca") or {})
    cpd = fill(CPDParams, sec.pop("cpd", None))
    col = fill(CollisionParams, sec.pop("collision", None))
    return replace(fill(CPCAParams, sec), cpd=cpd, collision=col)


# --- stages ----------------------------------------------------------------------

def run_gen(cfg: dict, task: TaskSpec, seed: int, out: Path, threads: int) -> list:
    count = int(cfg.get("count", 200))
    records = generate_dataset(task, count, seed, out, threads)
    ok = sum(r["status"] == "ok" for r in records)
    log.info("generated %d/%d samples into %s", ok, count, out)
    return records


def _samples(data: Path, split=None) -> list:
    if not (data / "manifest.jsonl").exists():
        raise FileNotFoundError(f"no manifest.jsonl under {data}")
    try:
        return load_samples(data, split)
    except (KeyError, ValueError) as exc:
        raise FormatError(f"unreadable dataset {data}: {exc}") from exc


def run_train(cfg: dict, data: Path, seed: int, out: Path, threads: int) -> NoisePredictor:
    tcfg = fill(TrainConfig, cfg.get("train"), seed=seed)
    mcfg = fill(ModelConfig, cfg.get("model"))
    n_points = int(cfg.get("n_points", 128))
    samples = _samples(data, "seen")
    if not samples:
        raise EmptySelection(f"no seen samples under {data}")
    vocab = Vocabulary(mcfg.name_width)
    items = [make_item(s, vocab, n_points=n_points) for s in samples]
    out.mkdir(parents=True, exist_ok=True)
    res = train(NoisePredictor(mcfg), items, tcfg, threads=threads)
    write_loss_csv(out / "loss.csv", res.curve)
    extra = {"n_points": n_points, "train": tcfg.to_dict(), "train_samples": len(items)}
    save_checkpoint(out / "model.ffm", res.model, extra)
    log.info("trained %d steps on %d samples; final loss %.4g", tcfg.steps, len(items), res.curve[-1][1])
    return res.model


def _load_model(path):
    model, desc = load_checkpoint(path)
    return model, desc.get("extra", {})


def _eval_params(cfg: dict, extra: dict) -> tuple:
    sec = dict(cfg.get("eval") or {})
    split = sec.pop("split", "unseen")
    if split not in ("seen", "unseen"):
        raise UsageError(f"split must be seen or unseen, got {split!r}")
    n_points = cfg.get("n_points", extra.get("n_points", EvalParams().n_points))
    return fill(EvalParams, sec, n_points=int(n_points)), split


def run_eval(cfg: dict, checkpoint, data: Path, seed: int, out: Path, threads: int,
             split=None, timing: bool = False) -> dict:
    t0 = time.perf_counter()
    model, extra = _load_model(checkpoint)
    params, cfg_split = _eval_params(cfg, extra)
    split = split or cfg_split
    samples = _samples(data, split)
    if not samples:
        raise EmptySelection(f"no ok samples in split {split!r} under {data}")
    train_samples = _samples(data, "seen")
    report, results = evaluate(model, samples, train_samples, seed, params, threads, split)
    write_report(report, results, out)
    if timing:
        (out / "timing.json").write_text(_dumps({"eval_seconds": time.perf_counter() - t0}))
    log.info("evaluated %d %s samples: PCE mean %.4g (mean-goal baseline %.4g)",
             report["sample_count"], split, report["pce"]["mean"],
             report["baselines"]["mean_goal"]["pce_mean"])
    return report


def _plan_record(sample, T, planner: PlannerParams) -> dict:
    goal_pose = T @ sample.moving.pose
    traj = plan_placement(sample.initial, sample.moving_id, goal_pose, planner)
    obj = sample.object_cloud()
    try:
        push = push_primitive(obj, T.apply(obj)).to_dict()
    except ZeroDisplacement:
        push = None
    return {"sample_index": sample.sample_index, "goal_pose": goal_pose.to_dict(),
            "trajectory": traj.to_dict(), "push": push}


def run_sample(cfg: dict, checkpoint, data: Path, index: int, seed: int, out: Path) -> dict:
    model, extra = _load_model(checkpoint)
    params, _ = _eval_params(cfg, extra)
    matches = [s for s in _samples(data) if s.sample_index == index]
    if not matches:
        raise UsageError(f"no ok sample with index {index} under {data}")
    s = matches[0]
    vocab = Vocabulary(model.config.name_width)
    item = make_item(s, vocab, n_points=params.n_points)
    gen = ddim_sample(model, item.cond, params.steps, params.eta, seed=sample_seed(seed, index))
    world = item.frame.to_world(gen.final)
    obj = s.object_cloud()
    try:
        fit = extract_goal_transform(obj[item.index], world, params.huber_delta)
        T, inliers, fallback = fit.transform, int(fit.inlier_mask.sum()), False
    except DegenerateInput:
        T, inliers, fallback = kabsch_fit(obj[item.index], world), None, True
    out.mkdir(parents=True, exist_ok=True)
    write_fpc(out / f"generated_{index:05d}.fpc", PointCloud(world))
    rec = {"sample_index": index, "transform": T.to_dict(), "inliers": inliers,
           "fallback": fallback, "points": int(len(world))}
    planner = fill(PlannerParams, cfg.get("planner"))
    try:
        rec["plan"] = _plan_record(s, T, planner)
    except GoalStateError as exc:
        rec["plan"] = {"error": f"{type(exc).__name__}: {exc}"}
    (out / f"sample_{index:05d}.json").write_text(_dumps(rec))
    return rec


def run_cpca(cfg: dict, demo_path, scene_path, out: Path) -> dict:
    try:
        demo = DemoRecord.from_dict(json.loads(Path(demo_path).read_text()))
        scene = SceneState.from_dict(json.loads(Path(scene_path).read_text()))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"cannot parse demo/scene: {exc}") from exc
    goal = cpca_generate(demo, scene, cpca_params(cfg))
    rec = {"goal_pose": goal.transform.to_dict(), "collision_free": goal.collision_free,
           "sphere_radius_used": goal.sphere_radius_used}
    out.mkdir(parents=True, exist_ok=True)
    (out / "cpca_goal.json").write_text(_dumps(rec))
    return rec


def run_e2e(config_path, task_name, seed: int, out: Path, threads: int) -> tuple:
    """Every stage in order; the summary records the first failing stage by name."""
    stages = []
    summary = {"seed": seed, "stages": stages}

    def record(name, exc=None):
        stages.append({"name": name, "status": "ok" if exc is None else "failed",
                       **({} if exc is None else {"error": f"{type(exc).__name__}: {exc}"})})

    code = EXIT_OK
    try:
        try:
            cfg = load_config(config_path)
            task = resolve_task(cfg, task_name)
        except Exception as exc:
            record("parse", exc)
            raise
        record("parse")
        summary["task_id"] = task.task_id
        for name, fn in (
                ("gen", lambda: run_gen(cfg, task, seed, out / "data", threads)),
                ("train", lambda: run_train(cfg, out / "data", seed, out / "train", threads)),
                ("eval", lambda: run_eval(cfg, out / "train/model.ffm", out / "data", seed,
                                          out / "eval", threads)),
                ("plan", lambda: _e2e_plan(cfg, out, seed))):
            try:
                result = fn()
            except Exception as exc:
                record(name, exc)
                raise
            record(name)
            if name == "eval":
                base = result["baselines"]["mean_goal"]
                summary.update(heldout_pce_mean=result["pce"]["mean"],
                               baseline_pce_mean=base["pce_mean"],
                               improvement=base["improvement"],
                               beats_baseline=result["pce"]["mean"] < base["pce_mean"],
                               success_rate=result["success_rate"])
    except Exception as exc:
        code = exit_code(exc)
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.json").write_text(_dumps(summary))
    return code, summary


def _e2e_plan(cfg: dict, out: Path, seed: int) -> dict:
    unseen = _samples(out / "data", "unseen")
    if not unseen:
        raise EmptySelection("no held-out sample to plan for")
    rec = run_sample(cfg, out / "train/model.ffm", out / "data", unseen[0].sample_index,
                     seed, out / "plan")
    if "error" in rec["plan"]:
        raise GoalStateError(rec["plan"]["error"])
    return rec


# --- argument parsing ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="root RNG seed")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    common.add_argument("--threads", type=int, default=1, help="workers for per-sample work")
    common.add_argument("--config", type=Path, help="JSON config; keys mirror parameter names")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="goalstate", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="generate a procedural dataset")
    g.add_argument("--task", help="builtin task name or task JSON file")
    g.add_argument("--count", type=int)

    c = sub.add_parser("cpca", parents=[common], help="transfer one demo goal to a new scene")
    c.add_argument("--demo", required=True, type=Path)
    c.add_argument("--scene", required=True, type=Path)

    t = sub.add_parser("train", parents=[common], help="train the noise predictor")
    t.add_argument("--data", required=True, type=Path)
    t.add_argument("--steps", type=int)

    s = sub.add_parser("sample", parents=[common], help="generate and plan one goal")
    s.add_argument("--checkpoint", required=True, type=Path)
    s.add_argument("--data", required=True, type=Path)
    s.add_argument("--index", required=True, type=int)

    e = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on a split")
    e.add_argument("--checkpoint", required=True, type=Path)
    e.add_argument("--data", required=True, type=Path)
    e.add_argument("--split", choices=["seen", "unseen"])
    e.add_argument("--timing", action="store_true", help="also write timing.json")

    x = sub.add_parser("e2e", parents=[common], help="gen, train, eval and plan in one go")
    x.add_argument("--task", help="builtin task name or task JSON file")
    return p


def _dispatch(args) -> int:
    if args.threads < 1:
        raise UsageError("--threads must be at least 1")
    if args.command == "e2e":
        code, summary = run_e2e(args.config, args.task, args.seed, args.out, args.threads)
        print(json.dumps(summary, sort_keys=True))
        return code
    cfg = load_config(args.config)
    if args.command == "gen":
        if args.count is not None:
            cfg["count"] = args.count
        task = resolve_task(cfg, args.task)
        if int(cfg.get("count", 200)) < 1:
            raise UsageError("--count must be at least 1")
        recs = run_gen(cfg, task, args.seed, args.out, args.threads)
        print(json.dumps({"manifest": str(args.out / "manifest.jsonl"),
                          "ok": sum(r["status"] == "ok" for r in recs), "count": len(recs)}))
    elif args.command == "cpca":
        print(json.dumps(run_cpca(cfg, args.demo, args.scene, args.out), sort_keys=True))
    elif args.command == "train":
        if args.steps is not None:
            cfg["train"] = dict(cfg.get("train") or {}, steps=args.steps)
        run_train(cfg, args.data, args.seed, args.out, args.threads)
        print(json.dumps({"checkpoint": str(args.out / "model.ffm")}))
    elif args.command == "sample":
        rec = run_sample(cfg, args.checkpoint, args.data, args.index, args.seed, args.out)
        print(json.dumps({"sample": str(args.out / f"sample_{args.index:05d}.json"),
                          "fallback": rec["fallback"]}))
    elif args.command == "eval":
        rep = run_eval(cfg, args.checkpoint, args.data, args.seed, args.out, args.threads,
                       args.split, args.timing)
        print(json.dumps({"report": str(args.out / "eval_report.json"),
                          "pce_mean": rep["pce"]["mean"]}))
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return _dispatch(args)
    except Exception as exc:
        if not isinstance(exc, (GoalStateError, OSError, ValueError, KeyError, FloatingPointError)):
            raise
        print(f"goalstate {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
