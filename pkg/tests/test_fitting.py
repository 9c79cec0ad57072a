import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from morphfit.camera import AffineCamera, camera_from_pose, estimate_affine_camera
from morphfit.errors import (
    InsufficientPointsError,
    LandmarkMappingError,
    ParameterError,
    RankError,
)
from morphfit.fitting import FitConfig, drop_missing, fit, fit_shape, landmark_rmse
from morphfit.landmarks import LandmarkSet
from morphfit.model import LANDMARKS_49, instantiate


def synth(model, rng, alpha=None, camera=None, noise=0.0, names=LANDMARKS_49):
    if alpha is None:
        alpha = rng.uniform(-3, 3, size=model.num_coeffs)
    if camera is None:
        camera = camera_from_pose(*rng.uniform(-25, 25, 3), scale=rng.uniform(1.5, 2.5),
                                  tx=rng.uniform(80, 120), ty=rng.uniform(80, 120))
    pts = instantiate(model, alpha).points[model.landmark_vertices(names)]
    x = camera.project(pts) + rng.normal(scale=noise, size=(len(names), 2)) if noise else camera.project(pts)
    return alpha, camera, list(zip(names, x))


def ridge_oracle(camera, model, landmarks, lam, k):
    """Dense normal equations built entry by entry."""
    names = [n for n, _ in landmarks]
    x = np.array([p for _, p in landmarks])
    v = model.landmark_vertices(names)
    P, t = camera.linear, camera.translation
    A = np.zeros((2 * len(v), k))
    b = np.zeros(2 * len(v))
    for i, vi in enumerate(v):
        mean = model.mean_shape[3 * vi:3 * vi + 3]
        for r in range(2):
            b[2 * i + r] = x[i, r] - (P[r] @ mean + t[r])
            for j in range(k):
                col = model.shape_basis[3 * vi:3 * vi + 3, j] * model.shape_stddevs[j]
                A[2 * i + r, j] = P[r] @ col
    return np.linalg.solve(A.T @ A + lam * np.eye(k), A.T @ b)


def test_fit_shape_recovers_alpha(small_model, rng):
    alpha, camera, lms = synth(small_model, rng)
    got = fit_shape(camera, small_model, lms, FitConfig(lam=1e-6))
    assert np.max(np.abs(got - alpha)) < 1e-6


def test_fit_shape_huge_lambda_gives_mean(small_model, rng):
    _, camera, lms = synth(small_model, rng)
    got = fit_shape(camera, small_model, lms, FitConfig(lam=1e12))
    assert np.linalg.norm(got) < 1e-6


def test_fit_shape_matches_dense_oracle(small_model, rng):
    names = LANDMARKS_49[:5]
    _, camera, lms = synth(small_model, rng, names=names, noise=2.0)
    got = fit_shape(camera, small_model, lms, FitConfig(lam=0.7, num_coeffs=3))
    want = ridge_oracle(camera, small_model, lms, 0.7, 3)
    assert np.max(np.abs(got - want)) < 1e-10


def test_ridge_shrinkage(small_model, rng):
    _, camera, lms = synth(small_model, rng, noise=1.0)
    norms = [np.linalg.norm(fit_shape(camera, small_model, lms, FitConfig(lam=lam)))
             for lam in (0.01, 0.1, 1.0, 10.0, 100.0)]
    assert all(a >= b for a, b in zip(norms, norms[1:]))


def test_fit_shape_errors(small_model, rng):
    _, camera, lms = synth(small_model, rng)
    with pytest.raises(LandmarkMappingError, match="nowhere"):
        fit_shape(camera, small_model, lms + [("nowhere", (1.0, 2.0))])
    # 2 landmarks give 4 equations for 20 unknowns
    with pytest.raises(RankError):
        fit_shape(camera, small_model, lms[:2], FitConfig(lam=0.0))


def test_fit_config_validation():
    with pytest.raises(ParameterError):
        FitConfig(lam=-1)
    with pytest.raises(ParameterError):
        FitConfig(iterations=0)


def test_alternation_noiseless_recovery(small_model, rng):
    ok = 0
    for _ in range(20):
        alpha, camera, lms = synth(small_model, rng)
        res = fit(small_model, lms, FitConfig(lam=1e-6, iterations=5))
        assert len(res.trace) == 5
        rmse = landmark_rmse(small_model, res, lms)
        ok += rmse < 1e-6 and np.max(np.abs(res.alpha - alpha)) < 1e-4
    assert ok >= 19


def test_zero_alpha_data_gives_mean_camera(small_model, rng):
    _, camera, lms = synth(small_model, rng, alpha=np.zeros(20))
    res = fit(small_model, lms, FitConfig(lam=1e-6))
    assert np.linalg.norm(res.alpha) < 1e-6
    mean_pts = small_model.mean_points()[small_model.landmark_vertices(LANDMARKS_49)]
    ref = estimate_affine_camera(np.array([p for _, p in lms]), mean_pts)
    assert np.allclose(res.camera.matrix, ref.matrix, atol=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([0.0, 0.5]), st.sampled_from([1e-6, 0.1, 3.0]))
def test_cost_trace_non_increasing(small_model, seed, noise, lam):
    rng = np.random.default_rng(seed)
    _, _, lms = synth(small_model, rng, noise=noise)
    costs = fit(small_model, lms, FitConfig(lam=lam, iterations=6)).costs
    assert all(b <= a + 1e-9 for a, b in zip(costs, costs[1:]))


def test_translation_equivariance(small_model, rng):
    _, _, lms = synth(small_model, rng, noise=0.5)
    moved = [(n, p + np.array([37.0, -12.5])) for n, p in lms]
    a = fit(small_model, lms)
    b = fit(small_model, moved)
    assert np.max(np.abs(a.alpha - b.alpha)) < 1e-8
    assert np.allclose(a.camera.linear, b.camera.linear, atol=1e-9)
    assert np.allclose(b.camera.translation - a.camera.translation, [37.0, -12.5], atol=1e-8)


def test_landmark_input_forms(small_model, rng):
    _, _, lms = synth(small_model, rng, noise=0.5)
    ref = fit(small_model, lms).alpha
    assert np.array_equal(fit(small_model, dict(lms)).alpha, ref)
    ls = LandmarkSet([n for n, _ in lms], [p for _, p in lms])
    assert np.array_equal(fit(small_model, ls).alpha, ref)


def test_fit_needs_four_points(small_model, rng):
    _, _, lms = synth(small_model, rng)
    with pytest.raises(InsufficientPointsError, match="insufficient-points"):
        fit(small_model, lms[:3])


def test_drop_missing(small_model, rng):
    _, _, lms = synth(small_model, rng)
    lms = [(n, np.array([np.nan, np.nan]) if i % 2 else p) for i, (n, p) in enumerate(lms)]
    kept = drop_missing(lms)
    assert len(kept) == 25
    fit(small_model, kept)
    with pytest.raises(InsufficientPointsError):
        drop_missing(lms[:6])


def test_num_coeffs_subset(small_model, rng):
    _, _, lms = synth(small_model, rng, noise=0.5)
    res = fit(small_model, lms, FitConfig(num_coeffs=5))
    assert res.alpha.shape == (5,)
    cam = AffineCamera(res.camera.matrix)
    assert np.isfinite(cam.matrix).all()
