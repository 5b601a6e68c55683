"""DDIM / ancestral sampling and recovery of the rigid goal transform."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..errors import RangeError, SizeMismatch, StepError
from ..geometry import PointCloud
from ..registration import RobustFitResult, robust_rigid_register
from .conditioning import ConditionBundle
from .schedule import NoiseSchedule, make_schedule, one_shot_denoise


@dataclass(frozen=True)
class DiffusionSample:
    final: np.ndarray
    trajectory: tuple = field(default=(), repr=False)


def ddim_timesteps(T: int, steps: int) -> list:
    """Descending, stride-uniform subsequence of 1..T that always starts at T."""
    if steps < 1:
        raise StepError("steps must be at least 1")
    if steps > T:
        raise StepError(f"steps {steps} exceed schedule length {T}")
    ts = np.unique(np.round(np.linspace(1, T, steps)).astype(int))
    return [int(t) for t in ts[::-1]]


def ddim_sample(model: Callable, cond: ConditionBundle, steps: int = 100, eta: float = 0.0,
                seed: int = 0, schedule: Optional[NoiseSchedule] = None,
                keep_trajectory: bool = False) -> DiffusionSample:
    """Reverse diffusion from P^T ~ N(0, I) over a subsequence of timesteps.

    ``eta = 0`` gives deterministic DDIM; ``eta = 1`` with ``steps = T`` is
    ancestral DDPM sampling with posterior variance.
    """
    schedule = schedule or make_schedule()
    if not 0.0 <= eta <= 1.0:
        raise RangeError("eta must lie in [0, 1]")
    ts = ddim_timesteps(schedule.T, steps)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((cond.n_points, 3))
    traj = [x] if keep_trajectory else None
    for i, t in enumerate(ts):
        t_prev = ts[i + 1] if i + 1 < len(ts) else 0
        ab, ab_prev = schedule.ab(t), schedule.ab(t_prev)
        eps = np.asarray(model(x, cond, t), dtype=np.float64)
        x0 = one_shot_denoise(x, t, eps, schedule)
        sigma = eta * np.sqrt((1.0 - ab_prev) / (1.0 - ab)) * np.sqrt(1.0 - ab / ab_prev)
        direction = np.sqrt(max(1.0 - ab_prev - sigma * sigma, 0.0)) * eps
        x = np.sqrt(ab_prev) * x0 + direction
        if sigma > 0:
            x = x + sigma * rng.standard_normal(x.shape)
        if keep_trajectory:
            traj.append(x)
    return DiffusionSample(x, tuple(traj) if keep_trajectory else ())


class OraclePredictor:
    """Returns the exact noise consistent with a fixed clean cloud ``x0``."""

    def __init__(self, x0, schedule: Optional[NoiseSchedule] = None):
        self.x0 = np.asarray(x0, dtype=np.float64)
        self.schedule = schedule or make_schedule()

    def __call__(self, x_t, cond, t):
        ab = self.schedule.ab(t)
        return (np.asarray(x_t) - np.sqrt(ab) * self.x0) / np.sqrt(1.0 - ab)


def extract_goal_transform(initial_object, generated, huber_delta: float = 0.01) -> RobustFitResult:
    """Rigid motion taking the initial object cloud onto the generated goal cloud."""
    src = initial_object.points if isinstance(initial_object, PointCloud) else np.asarray(initial_object)
    gen = generated.final if isinstance(generated, DiffusionSample) else np.asarray(generated)
    if src.shape != gen.shape:
        raise SizeMismatch(f"{src.shape[0]} initial points vs {gen.shape[0]} generated")
    return robust_rigid_register(src, gen, huber_delta)
