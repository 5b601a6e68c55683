"""Noise schedule, forward noising and one-shot denoising."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import RangeError, ShapeMismatch

DEFAULT_T = 100
DEFAULT_BETA = (1e-4, 0.02)


@dataclass(frozen=True)
class NoiseSchedule:
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    @property
    def T(self) -> int:
        return self.beta.shape[0]

    def ab(self, t: int) -> float:
        """alpha_bar at 1-indexed step ``t``; step 0 means no noise."""
        if t == 0:
            return 1.0
        check_step(t, self.T)
        return float(self.alpha_bar[t - 1])


def check_step(t, T: int) -> None:
    if not 1 <= int(t) <= T or int(t) != t:
        raise RangeError(f"timestep {t} outside [1, {T}]")


def make_schedule(T: int = DEFAULT_T, beta_start: float = DEFAULT_BETA[0],
                  beta_end: float = DEFAULT_BETA[1]) -> NoiseSchedule:
    """Linear beta schedule with alpha_bar as a running product (in log space)."""
    if T < 1:
        raise RangeError("T must be at least 1")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise RangeError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    beta = np.linspace(beta_start, beta_end, T) if T > 1 else np.array([beta_start])
    alpha = 1.0 - beta
    alpha_bar = np.exp(np.cumsum(np.log1p(-beta)))
    for a in (beta, alpha, alpha_bar):
        a.setflags(write=False)
    return NoiseSchedule(beta, alpha, alpha_bar)


def _shapes(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"shapes differ: {a.shape} vs {b.shape}")
    return a, b


def forward_noise(x0, t: int, eps, schedule: NoiseSchedule) -> np.ndarray:
    """x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps."""
    x0, eps = _shapes(x0, eps)
    check_step(t, schedule.T)
    ab = schedule.ab(t)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def one_shot_denoise(x_t, t: int, eps_hat, schedule: NoiseSchedule) -> np.ndarray:
    """x0_hat = (x_t - sqrt(1 - ab_t) eps_hat) / sqrt(ab_t)."""
    x_t, eps_hat = _shapes(x_t, eps_hat)
    check_step(t, schedule.T)
    ab = schedule.ab(t)
    return (x_t - np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(ab)
