"""Non-rigid coherent point drift and Huber-robust rigid registration."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .errors import DegenerateInput, SizeMismatch, WidthMismatch
from .geometry import PointCloud, RigidTransform, kabsch_fit


@dataclass(frozen=True)
class CPDParams:
    beta: Optional[float] = None  # None: 0.3 x source bounding-box diagonal
    lam: float = 2.0
    max_iter: int = 100
    tol: float = 1e-6
    feature_weight: float = 1.0
    outlier_weight: float = 0.1


@dataclass(frozen=True)
class NonRigidResult:
    deformed: PointCloud
    displacement: np.ndarray
    iterations_run: int
    final_objective: float
    converged: bool
    sigma2: float
    objective_history: tuple = field(default=(), repr=False)


@dataclass(frozen=True)
class RobustFitResult:
    transform: RigidTransform
    inlier_mask: np.ndarray
    residuals: np.ndarray
    iterations_run: int = 0


def _feature_prior(source: PointCloud, target: PointCloud, weight: float):
    """Per-target mixing weights over source points, scaled so a flat prior is all ones.

    Returns None when the feature channel is disabled, so the spatial-only path
    runs unchanged.
    """
    if weight == 0.0 or source.features is None or target.features is None:
        return None
    if source.feature_width != target.feature_width:
        raise WidthMismatch(
            f"feature widths differ: {source.feature_width} vs {target.feature_width}")
    if source.feature_width == 0:
        return None
    fs, ft = source.features, target.features
    fd = (np.sum(fs * fs, 1)[:, None] + np.sum(ft * ft, 1)[None, :] - 2.0 * fs @ ft.T)
    logits = -0.5 * weight * np.maximum(fd, 0.0)
    logits -= logits.max(axis=0, keepdims=True)
    a = np.exp(logits)
    return a * (source.points.shape[0] / a.sum(axis=0, keepdims=True))


def cpd_nonrigid(source: PointCloud, target: PointCloud,
                 params: CPDParams = CPDParams()) -> NonRigidResult:
    """Deform ``source`` towards ``target`` with coherent point drift.

    EM on a Gaussian mixture centred on the displaced source points. The
    displacement field is ``G @ W`` with ``G`` the Gaussian Gram matrix of the
    source (width ``beta``). Features, when present on both clouds, only
    reweight the responsibilities; the M-step stays purely spatial.

    The returned ``objective_history`` holds the negative log-posterior
    (up to a constant) before each M-step; it never increases.
    """
    if len(source) == 0 or len(target) == 0:
        raise SizeMismatch("both clouds must be non-empty")
    Y = source.points
    X = target.points
    M, N, D = Y.shape[0], X.shape[0], 3
    prior = _feature_prior(source, target, params.feature_weight)

    diag = float(np.linalg.norm(Y.max(0) - Y.min(0)))
    beta = params.beta if params.beta is not None else 0.3 * diag
    if beta <= 0:
        beta = 1.0
    G = np.exp(-kernels.pairwise_sqdist(Y, Y) / (2.0 * beta * beta))
    W = np.zeros((M, D))
    T = Y.copy()
    sigma2 = float(kernels.pairwise_sqdist(X, Y).sum()) / (D * M * N)
    scale2 = max(diag, float(np.linalg.norm(X.max(0) - X.min(0)))) ** 2
    floor = 1e-12 * max(scale2, 1e-12)
    w = params.outlier_weight
    ratio = w / (1.0 - w) * M / N

    history = []
    converged = False
    it = 0
    while it < params.max_iter:
        if sigma2 <= floor:
            converged = True
            break
        d2 = kernels.pairwise_sqdist(T, X)
        E = np.exp(-d2 / (2.0 * sigma2))
        if prior is not None:
            E *= prior
        c = (2.0 * np.pi * sigma2) ** (D / 2.0) * ratio
        den = E.sum(axis=0) + c
        obj = (-np.sum(np.log(den)) + 0.5 * D * N * np.log(sigma2)
               + 0.5 * params.lam * float(np.sum(W * (G @ W))))
        if history and abs(history[-1] - obj) <= params.tol * max(1.0, abs(obj)):
            history.append(obj)
            converged = True
            break
        history.append(obj)
        P = E / den
        P1 = P.sum(axis=1)
        Pt1 = P.sum(axis=0)
        PX = P @ X
        Np = P1.sum()
        A = P1[:, None] * G + params.lam * sigma2 * np.eye(M)
        W = np.linalg.solve(A, PX - P1[:, None] * Y)
        T = Y + G @ W
        sigma2 = float((Pt1 @ np.sum(X * X, 1) - 2.0 * np.sum(PX * T)
                        + P1 @ np.sum(T * T, 1)) / (Np * D))
        sigma2 = max(sigma2, 0.0)
        it += 1

    displacement = T - Y
    deformed = PointCloud(Y + displacement, source.features)
    return NonRigidResult(
        deformed=deformed,
        displacement=deformed.points - Y,
        iterations_run=it,
        final_objective=float(history[-1]) if history else 0.0,
        converged=converged,
        sigma2=sigma2,
        objective_history=tuple(history),
    )


def huber_weights(residuals: np.ndarray, delta: float) -> np.ndarray:
    """IRLS weights from the Huber influence function: 1 inside delta, delta/r outside."""
    r = np.asarray(residuals, dtype=np.float64)
    if not np.isfinite(delta):
        return np.ones_like(r)
    return np.where(r <= delta, 1.0, delta / np.maximum(r, 1e-300))


def _residuals(T: RigidTransform, src, gen):
    return np.linalg.norm(T.apply(src) - gen, axis=1)


def robust_rigid_register(source, generated, huber_delta: float = 0.01,
                          max_iter: int = 50, tol: float = 1e-10) -> RobustFitResult:
    """Rigid transform explaining the dominant structurally consistent subset.

    Iteratively reweighted Kabsch with Huber weights. The kernel width starts
    at the largest residual of the plain least-squares fit and halves each
    iteration down to ``huber_delta``, so the majority cluster wins before the
    kernel becomes narrow. The transform is finally refit on the inliers
    (residual < 2 * huber_delta) until the inlier set stops changing, which
    removes the residual pull of rejected points.
    """
    src = source.points if isinstance(source, PointCloud) else np.asarray(source, float)
    gen = generated.points if isinstance(generated, PointCloud) else np.asarray(generated, float)
    if src.shape != gen.shape:
        raise SizeMismatch(f"{src.shape[0]} source points vs {gen.shape[0]} generated")
    if huber_delta <= 0:
        raise ValueError("huber_delta must be positive")

    T = kabsch_fit(src, gen)
    r = _residuals(T, src, gen)
    it = 0
    if np.isfinite(huber_delta):
        width = max(huber_delta, float(r.max()))
        while it < max_iter:
            width = max(huber_delta, 0.5 * width)
            w = huber_weights(r, width)
            if np.count_nonzero(w > 0) < 3:
                raise DegenerateInput("fewer than 3 points carry weight")
            T_new = kabsch_fit(src, gen, w)
            step = (np.abs(T_new.rotation - T.rotation).max()
                    + np.abs(T_new.translation - T.translation).max())
            T = T_new
            r = _residuals(T, src, gen)
            it += 1
            if width == huber_delta and step < tol:
                break

    mask = r < 2.0 * huber_delta
    for _ in range(20):
        if np.count_nonzero(mask) < 3:
            raise DegenerateInput("inlier set collapsed below 3 points")
        if mask.all():
            T = kabsch_fit(src, gen)
        else:
            T = kabsch_fit(src[mask], gen[mask])
        r = _residuals(T, src, gen)
        new_mask = r < 2.0 * huber_delta
        if np.array_equal(new_mask, mask):
            break
        mask = new_mask
    if np.count_nonzero(mask) < 3:
        raise DegenerateInput("inlier set collapsed below 3 points")
    return RobustFitResult(T, mask, r, it)
