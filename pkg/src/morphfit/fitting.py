"""Landmark-based shape fitting: ridge-regularized shape coefficients and the
camera/shape alternation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import AffineCamera, estimate_affine_camera
from .errors import (
    DimensionError,
    InsufficientPointsError,
    NumericalError,
    ParameterError,
    RankError,
)
from .model import instantiate

DEFAULT_LAMBDA = 3.0
DEFAULT_ITERATIONS = 5
DEFAULT_MAX_COEFFS = 63


@dataclass(frozen=True)
class FitConfig:
    lam: float = DEFAULT_LAMBDA
    iterations: int = DEFAULT_ITERATIONS
    num_coeffs: int | None = None

    def __post_init__(self):
        if not (self.lam >= 0 and np.isfinite(self.lam)):
            raise ParameterError(f"lambda must be a finite non-negative number, got {self.lam}")
        if self.iterations < 1:
            raise ParameterError(f"iterations must be >= 1, got {self.iterations}")
        if self.num_coeffs is not None and self.num_coeffs < 0:
            raise ParameterError("num_coeffs must be non-negative")

    def coeffs_for(self, model):
        if self.num_coeffs is None:
            return min(model.num_coeffs, DEFAULT_MAX_COEFFS)
        if self.num_coeffs > model.num_coeffs:
            raise DimensionError(f"num_coeffs {self.num_coeffs} exceeds model K={model.num_coeffs}")
        return self.num_coeffs


@dataclass
class FitResult:
    camera: AffineCamera
    alpha: np.ndarray
    trace: list = field(default_factory=list)  # (landmark SSE, lambda * ||alpha||^2) per iteration

    @property
    def costs(self):
        return [sse + reg for sse, reg in self.trace]


def _split_landmarks(landmarks):
    if isinstance(landmarks, dict):
        items = list(landmarks.items())
    else:
        items = [(name, pt) for name, pt in landmarks]
    names = [str(n) for n, _ in items]
    pts = np.asarray([p for _, p in items], dtype=np.float64).reshape(-1, 2)
    return names, pts


def drop_missing(landmarks, minimum=4):
    """Remove landmarks whose coordinates are not finite.

    Raises if fewer than ``minimum`` remain.
    """
    names, pts = _split_landmarks(landmarks)
    keep = np.all(np.isfinite(pts), axis=1)
    if keep.sum() < minimum:
        raise InsufficientPointsError(
            f"insufficient-points: {int(keep.sum())} usable landmarks, need >= {minimum}")
    return [(n, p) for n, p, k in zip(names, pts, keep) if k]


def _landmark_rows(model, vertices, n_coeffs):
    idx = np.stack([3 * vertices, 3 * vertices + 1, 3 * vertices + 2], axis=1).ravel()
    mean = model.mean_shape[idx].reshape(-1, 3)
    basis = model.shape_basis[idx, :n_coeffs] * model.shape_stddevs[:n_coeffs]
    return mean, basis.reshape(len(vertices), 3, n_coeffs)


def _solve_ridge(A, b, lam):
    n = A.shape[1]
    if n == 0:
        return np.zeros(0)
    if lam == 0:
        rank = np.linalg.matrix_rank(A)
        if rank < n:
            raise RankError(f"design matrix has rank {rank} < {n} coefficients and lambda is 0")
        return np.linalg.lstsq(A, b, rcond=None)[0]
    aug = np.vstack([A, np.sqrt(lam) * np.eye(n)])
    rhs = np.concatenate([b, np.zeros(n)])
    q, r = np.linalg.qr(aug)
    return np.linalg.solve(r, q.T @ rhs)


def _fit_shape_arrays(camera, mean, basis, pts, lam):
    P = camera.linear
    # (N, 2, K): each landmark's basis displacement through the camera
    A = np.einsum("ij,njk->nik", P, basis).reshape(-1, basis.shape[2])
    b = (pts - (mean @ P.T + camera.translation)).ravel()
    return _solve_ridge(A, b, lam)


def fit_shape(camera, model, landmarks, config=None):
    """Shape coefficients minimizing landmark SSE + lambda * ||alpha||^2 for a fixed camera."""
    config = config or FitConfig()
    names, pts = _split_landmarks(landmarks)
    if len(names) < 1:
        raise InsufficientPointsError("insufficient-points: need at least one landmark")
    vertices = model.landmark_vertices(names)
    mean, basis = _landmark_rows(model, vertices, config.coeffs_for(model))
    return _fit_shape_arrays(camera, mean, basis, pts, config.lam)


def _cost(camera, mean, basis, pts, alpha, lam):
    shape = mean + basis @ alpha
    r = camera.project(shape) - pts
    return float(np.sum(r ** 2)), float(lam * alpha @ alpha)


def fit(model, landmarks, config=None):
    """Alternate affine camera estimation and shape fitting.

    The first camera is estimated against the mean shape. Each iteration fits
    the shape for the current camera, then re-estimates the camera against
    the identity-specific shape, and records the objective.
    """
    config = config or FitConfig()
    names, pts = _split_landmarks(landmarks)
    if len(names) < 4:
        raise InsufficientPointsError(f"insufficient-points: need >= 4 landmarks, got {len(names)}")
    vertices = model.landmark_vertices(names)
    n_coeffs = config.coeffs_for(model)
    mean, basis = _landmark_rows(model, vertices, n_coeffs)

    camera = estimate_affine_camera(pts, mean)
    alpha = np.zeros(n_coeffs)
    trace = []
    for _ in range(config.iterations):
        alpha = _fit_shape_arrays(camera, mean, basis, pts, config.lam)
        camera = estimate_affine_camera(pts, mean + basis @ alpha)
        sse, reg = _cost(camera, mean, basis, pts, alpha, config.lam)
        if not (np.isfinite(sse) and np.isfinite(reg)):
            raise NumericalError("fitting objective became non-finite")
        trace.append((sse, reg))
    return FitResult(camera, alpha, trace)


def fitted_mesh(model, result):
    return instantiate(model, result.alpha)


def landmark_rmse(model, result, landmarks):
    names, pts = _split_landmarks(landmarks)
    mean, basis = _landmark_rows(model, model.landmark_vertices(names), result.alpha.size)
    r = result.camera.project(mean + basis @ result.alpha) - pts
    return float(np.sqrt(np.mean(np.sum(r ** 2, axis=1))))
