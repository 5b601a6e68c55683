"""Deterministic AdamW training of the noise predictor."""
from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..errors import NonFiniteLoss
from .conditioning import TrainingItem
from .network import NoisePredictor
from .objective import DEFAULT_OMEGA, draw_noise, loss_at
from .schedule import NoiseSchedule, make_schedule


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch: int = 16
    lr: float = 1e-3
    omega: float = DEFAULT_OMEGA
    seed: int = 0
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float = 1.0
    log_every: int = 100

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    model: NoisePredictor
    curve: list          # rows of (step, total, noise_term, structure_term)


class AdamW:
    """Adam with decoupled weight decay, applied to weight matrices only."""

    def __init__(self, params: dict, cfg: TrainConfig):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.k = 0

    def step(self, params: dict, grads: dict) -> None:
        c = self.cfg
        self.k += 1
        b1c = 1.0 - c.beta1 ** self.k
        b2c = 1.0 - c.beta2 ** self.k
        for name, p in params.items():
            g = grads[name]
            self.m[name] = c.beta1 * self.m[name] + (1.0 - c.beta1) * g
            self.v[name] = c.beta2 * self.v[name] + (1.0 - c.beta2) * g * g
            if p.ndim > 1 and c.weight_decay:
                p *= 1.0 - c.lr * c.weight_decay
            p -= c.lr * (self.m[name] / b1c) / (np.sqrt(self.v[name] / b2c) + c.adam_eps)


def batch_draws(cfg: TrainConfig, step: int, items: Sequence[TrainingItem], T: int):
    """(item index, t, eps) for every batch slot; a pure function of (seed, step)."""
    rng = np.random.default_rng([cfg.seed, step])
    picks = rng.integers(0, len(items), size=cfg.batch)
    out = []
    for slot, i in enumerate(picks):
        t, eps = draw_noise(items[i], np.random.default_rng([cfg.seed, step, slot]), T)
        out.append((int(i), t, eps))
    return out


def train(model: NoisePredictor, items: Sequence[TrainingItem], cfg: TrainConfig = TrainConfig(),
          schedule: Optional[NoiseSchedule] = None, threads: int = 1,
          log_path=None) -> TrainResult:
    """Minimize the expected loss over ``items``; ``model`` is updated in place.

    Per-slot losses may run on ``threads`` workers; gradients are summed in slot
    order, so the result does not depend on the thread count.
    """
    if not items:
        raise ValueError("training set is empty")
    schedule = schedule or make_schedule(model.config.T)
    opt = AdamW(model.params, cfg)
    curve = []
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for step in range(cfg.steps):
            draws = batch_draws(cfg, step, items, schedule.T)

            def one(d):
                i, t, eps = d
                return loss_at(model, items[i], cfg.omega, t, eps, schedule)

            results = list(pool.map(one, draws)) if pool else [one(d) for d in draws]
            grads = model.zero_grads()
            tot = noi = st = 0.0
            for r in results:
                tot += r.total
                noi += r.noise_term
                st += r.structure_term
                for k in grads:
                    grads[k] += r.grads[k]
            n = float(len(results))
            tot, noi, st = tot / n, noi / n, st / n
            if not np.isfinite(tot):
                raise NonFiniteLoss(f"loss became {tot} at step {step} "
                                    f"(noise {noi}, structure {st})")
            norm2 = 0.0
            for k in grads:
                grads[k] /= n
                norm2 += float(np.sum(grads[k] * grads[k]))
            if not np.isfinite(norm2):
                raise NonFiniteLoss(f"non-finite gradient at step {step}")
            if cfg.grad_clip and norm2 > cfg.grad_clip ** 2:
                scale = cfg.grad_clip / np.sqrt(norm2)
                for k in grads:
                    grads[k] *= scale
            if step % cfg.log_every == 0 or step == cfg.steps - 1:
                curve.append((step, tot, noi, st))
            opt.step(model.params, grads)
    finally:
        if pool:
            pool.shutdown()
    if log_path is not None:
        write_loss_csv(log_path, curve)
    return TrainResult(model, curve)


def write_loss_csv(path, curve) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "total", "noise_term", "structure_term"])
        for step, tot, noi, st in curve:
            w.writerow([step, repr(float(tot)), repr(float(noi)), repr(float(st))])
