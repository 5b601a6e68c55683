"""Held-out evaluation: generate goals, recover rigid commands, score against ground truth."""
from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .dataset import TaskSample, sample_seed
from .diffusion.conditioning import Vocabulary, make_item
from .diffusion.objective import structure_term
from .diffusion.sampling import ddim_sample, extract_goal_transform
from .errors import DegenerateInput, GoalStateError
from .geometry import kabsch_fit, pce
from .scene import RelationKind

REPORT_VERSION = 1
PERCENTILES = (10, 25, 50, 75, 90)


class EmptySelection(GoalStateError, ValueError):
    """No samples matched the requested split."""


@dataclass(frozen=True)
class EvalParams:
    steps: int = 100
    eta: float = 0.0
    huber_delta: float = 0.01
    n_points: int = 128


@dataclass(frozen=True)
class SampleResult:
    sample_index: int
    pce: float
    pce_generated: float
    baseline_pce: float
    relative_baseline_pce: float
    structure_residual: float
    success: Optional[bool]
    fallback: bool


def pce_stats(values) -> dict:
    v = np.asarray(values, dtype=np.float64)
    out = {"mean": float(v.mean()), "median": float(np.median(v)),
           "min": float(v.min()), "max": float(v.max())}
    for q in PERCENTILES:
        out[f"p{q}"] = float(np.percentile(v, q))
    return out


@dataclass(frozen=True)
class MeanGoalBaseline:
    """Constant goal predictors fitted on training samples.

    ``world`` places the object's initial shape at the mean training goal
    centroid. ``relative`` offsets the mean goal-minus-background centroid from
    each test scene's background centroid, which is stronger when scenes move.
    """
    world: np.ndarray
    relative: np.ndarray

    @classmethod
    def fit(cls, samples: Sequence[TaskSample]) -> "MeanGoalBaseline":
        if not samples:
            raise EmptySelection("baseline needs at least one training sample")
        world = np.mean([s.goal_cloud.mean(axis=0) for s in samples], axis=0)
        rel = []
        for s in samples:
            bg, _ = s.background()
            ref = bg.mean(axis=0) if len(bg) else s.object_cloud().mean(axis=0)
            rel.append(s.goal_cloud.mean(axis=0) - ref)
        return cls(world, np.mean(rel, axis=0))

    def predict(self, sample: TaskSample) -> tuple:
        obj = sample.object_cloud()
        centred = obj - obj.mean(axis=0)
        bg, _ = sample.background()
        ref = bg.mean(axis=0) if len(bg) else obj.mean(axis=0)
        return centred + self.world, centred + ref + self.relative


def evaluate_sample(model, sample: TaskSample, baseline: MeanGoalBaseline, seed: int,
                    params: EvalParams = EvalParams(), vocab: Optional[Vocabulary] = None) -> SampleResult:
    vocab = vocab or Vocabulary(model.config.name_width)
    item = make_item(sample, vocab, n_points=params.n_points)
    gen = ddim_sample(model, item.cond, params.steps, params.eta,
                      seed=sample_seed(seed, sample.sample_index))
    gen_world = item.frame.to_world(gen.final)
    obj = sample.object_cloud()
    fallback = False
    try:
        T = extract_goal_transform(obj[item.index], gen_world, params.huber_delta).transform
    except DegenerateInput:
        # the robust fit found no dominant mode; the plain fit still yields a command
        T = kabsch_fit(obj[item.index], gen_world)
        fallback = True
    success = None
    if RelationKind(sample.relation) is not RelationKind.JOINT:
        success = bool(sample.goal_satisfied(T @ sample.moving.pose))
    base_w, base_r = baseline.predict(sample)
    struct, _ = structure_term(gen.final, item.cond.object_points)
    return SampleResult(sample.sample_index,
                        pce(T.apply(obj), sample.goal_cloud),
                        pce(gen_world, sample.goal_cloud[item.index]),
                        pce(base_w, sample.goal_cloud),
                        pce(base_r, sample.goal_cloud),
                        float(struct), success, fallback)


def evaluate(model, samples: Sequence[TaskSample], train_samples: Sequence[TaskSample],
             seed: int = 0, params: EvalParams = EvalParams(), threads: int = 1,
             split: str = "unseen") -> tuple:
    """Report dict and per-sample results; independent of ``threads``."""
    if not samples:
        raise EmptySelection(f"no samples in split {split!r}")
    baseline = MeanGoalBaseline.fit(train_samples)
    vocab = Vocabulary(model.config.name_width)

    def one(s):
        return evaluate_sample(model, s, baseline, seed, params, vocab)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, samples))
    else:
        results = [one(s) for s in samples]
    return build_report(results, samples[0], seed, params, split), results


def build_report(results: Sequence[SampleResult], first: TaskSample, seed: int,
                 params: EvalParams, split: str) -> dict:
    model_pce = pce_stats([r.pce for r in results])
    base = float(np.mean([r.baseline_pce for r in results]))
    rel = float(np.mean([r.relative_baseline_pce for r in results]))
    flags = [r.success for r in results if r.success is not None]
    return {
        "version": REPORT_VERSION,
        "task_id": first.task_id,
        "relation": first.relation,
        "split": split,
        "seed": int(seed),
        "sample_count": len(results),
        "sampler": {"steps": params.steps, "eta": params.eta, "huber_delta": params.huber_delta,
                    "n_points": params.n_points},
        "pce": model_pce,
        "pce_generated": pce_stats([r.pce_generated for r in results]),
        "success_rate": (sum(flags) / len(flags)) if flags else None,
        "fallback_count": sum(r.fallback for r in results),
        "structure_residual_mean": float(np.mean([r.structure_residual for r in results])),
        "baselines": {
            "mean_goal": {"pce_mean": base, "improvement": 1.0 - model_pce["mean"] / base},
            "relative_mean_goal": {"pce_mean": rel,
                                   "improvement": 1.0 - model_pce["mean"] / rel},
        },
    }


def report_schema() -> dict:
    text = resources.files("goalstate").joinpath("schemas/eval_report.schema.json").read_text()
    return json.loads(text)


def write_report(report: dict, results: Sequence[SampleResult], out_dir) -> tuple:
    """``eval_report.json`` and the per-sample ``eval_samples.csv``; returns both paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rp = out / "eval_report.json"
    rp.write_text(json.dumps(report, sort_keys=True, indent=2) + "\n")
    cp = out / "eval_samples.csv"
    with open(cp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_index", "pce", "pce_generated", "baseline_pce",
                    "relative_baseline_pce", "structure_residual", "success", "fallback"])
        for r in results:
            w.writerow([r.sample_index, repr(r.pce), repr(r.pce_generated), repr(r.baseline_pce),
                        repr(r.relative_baseline_pce), repr(r.structure_residual),
                        "" if r.success is None else int(r.success), int(r.fallback)])
    return rp, cp
