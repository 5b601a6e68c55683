"""Training objective: noise regression plus structural consistency of the one-shot estimate."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ShapeMismatch
from .conditioning import TrainingItem
from .network import NoisePredictor
from .schedule import NoiseSchedule, forward_noise, one_shot_denoise

DEFAULT_OMEGA = 0.1


def structure_term(x0_hat, reference):
    """Mean over all ordered pairs (diagonal included) of the squared difference
    between the two clouds' squared-distance matrices, and its gradient in ``x0_hat``."""
    x = np.asarray(x0_hat, dtype=np.float64)
    r = np.asarray(reference, dtype=np.float64)
    if x.shape != r.shape:
        raise ShapeMismatch(f"{x.shape} vs {r.shape}")
    n = x.shape[0]
    diff = x[:, None, :] - x[None, :, :]
    E = (diff ** 2).sum(-1) - ((r[:, None, :] - r[None, :, :]) ** 2).sum(-1)
    value = float(np.sum(E * E)) / (n * n)
    # d/dx_i of sum_ij E_ij^2 = 8 sum_j E_ij (x_i - x_j) since E is symmetric
    grad = (8.0 / (n * n)) * np.einsum("ij,ijk->ik", E, diff)
    return value, grad


@dataclass(frozen=True)
class LossValue:
    total: float
    noise_term: float
    structure_term: float
    grads: dict


def loss_at(model: NoisePredictor, item: TrainingItem, omega: float, t: int, eps,
            schedule: NoiseSchedule, with_grad: bool = True) -> LossValue:
    """Loss for a fixed draw (t, eps); gradients are exact for this draw."""
    if omega < 0:
        raise ValueError("omega must be non-negative")
    eps = np.asarray(eps, dtype=np.float64)
    x_t = forward_noise(item.x0, t, eps, schedule)
    eps_hat, cache = model.forward(x_t, item.cond, t)
    r = eps_hat - eps
    noise = float(np.mean(r * r))
    d_eps_hat = (2.0 / r.size) * r
    struct = 0.0
    if omega > 0:
        x0_hat = one_shot_denoise(x_t, t, eps_hat, schedule)
        struct, g_x0 = structure_term(x0_hat, item.cond.object_points)
        ab = schedule.ab(t)
        d_eps_hat = d_eps_hat + omega * g_x0 * (-np.sqrt(1.0 - ab) / np.sqrt(ab))
    grads = model.backward(cache, d_eps_hat) if with_grad else None
    return LossValue(noise + omega * struct, noise, struct, grads)


def draw_noise(item: TrainingItem, rng: np.random.Generator, T: int):
    t = int(rng.integers(1, T + 1))
    eps = rng.standard_normal(item.x0.shape)
    return t, eps


def total_loss(model: NoisePredictor, item: TrainingItem, omega: float,
               rng: np.random.Generator, schedule: NoiseSchedule) -> LossValue:
    """Draw (t, eps) from ``rng`` and evaluate the loss with its analytic gradient."""
    t, eps = draw_noise(item, rng, schedule.T)
    return loss_at(model, item, omega, t, eps, schedule)
