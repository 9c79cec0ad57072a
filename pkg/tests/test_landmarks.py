import math

import numpy as np
import pytest

from morphfit.errors import DimensionError, ModelFormatError, ParameterError, RankError
from morphfit.landmarks import (
    HogConfig,
    LandmarkSet,
    RegressorCascade,
    box_diagonal,
    box_size,
    detect_landmarks,
    extract_hog,
    load_cascade,
    normalized_error,
    perturbed_initializations,
    ridge_regression,
    save_cascade,
    train_cascade,
)
from morphfit.synthetic import random_sample


def naive_hog(gray, point, cfg):
    """Per-pixel reference: patch read at integer pixels, loops everywhere."""
    n, cs, nc, nb = cfg.patch_size, cfg.cell_size, cfg.num_cells, cfg.num_bins
    x0 = int(round(point[0] - (n + 1) / 2.0))
    y0 = int(round(point[1] - (n + 1) / 2.0))
    hist = np.zeros((nc, nc, nb))
    for i in range(1, n + 1):
        for j in range(1, n + 1):
            yy, xx = y0 + i, x0 + j
            gx = (gray[yy, xx + 1] - gray[yy, xx - 1]) / 2.0
            gy = (gray[yy + 1, xx] - gray[yy - 1, xx]) / 2.0
            mag = math.hypot(gx, gy)
            ang = math.degrees(math.atan2(gy, gx)) % 180.0
            bpos = ang / (180.0 / nb) - 0.5
            b0 = math.floor(bpos)
            fb = bpos - b0
            py = (i - 1 + 0.5) / cs - 0.5
            px = (j - 1 + 0.5) / cs - 0.5
            cy0, cx0 = math.floor(py), math.floor(px)
            fy, fx = py - cy0, px - cx0
            for cy, wy in ((cy0, 1 - fy), (cy0 + 1, fy)):
                for cx, wx in ((cx0, 1 - fx), (cx0 + 1, fx)):
                    if not (0 <= cy < nc and 0 <= cx < nc):
                        continue
                    hist[cy, cx, b0 % nb] += mag * wy * wx * (1 - fb)
                    hist[cy, cx, (b0 + 1) % nb] += mag * wy * wx * fb
    d = hist.ravel()
    d = d / math.sqrt(np.sum(d ** 2) + 1e-6)
    d = np.minimum(d, 0.2)
    return d / math.sqrt(np.sum(d ** 2) + 1e-6)


# -- HOG --------------------------------------------------------------------


def test_constant_image_gives_zero_descriptor():
    f = extract_hog(np.full((64, 64, 3), 120, np.uint8), [[30, 30], [10, 50]])
    assert f.shape == (2 * 81,)
    assert not f.any()


def test_descriptor_length():
    cfg = HogConfig(cell_size=4, num_cells=4, num_bins=6)
    f = extract_hog(np.random.default_rng(0).uniform(0, 255, (50, 50)), np.full((7, 2), 25.0), cfg)
    assert f.size == 7 * 16 * 6 == 7 * cfg.length


def test_vertical_step_edge_matches_naive_oracle():
    img = np.zeros((60, 60))
    img[:, 31:] = 200.0
    cfg = HogConfig()
    pt = (30.5, 29.5)  # half-pixel centre puts every sample on a pixel
    got = extract_hog(img, [pt], cfg)
    want = naive_hog(img, pt, cfg)
    assert np.allclose(got, want, atol=1e-12)
    # a vertical edge has a horizontal gradient: orientation 0, shared by bins 0 and 8
    hist = got.reshape(3, 3, 9)
    energy = hist.sum(axis=(0, 1))
    assert energy[[0, 8]].sum() > 0.99 * energy.sum()


def test_random_image_matches_naive_oracle(rng):
    img = rng.uniform(0, 255, size=(70, 80))
    cfg = HogConfig(cell_size=6, num_cells=3, num_bins=8)
    for pt in [(35.5, 30.5), (40.0, 33.5), (20.5, 21.5)]:
        if pt[0] % 1 == 0:
            continue
        got = extract_hog(img, [pt], cfg)
        assert np.allclose(got, naive_hog(img, pt, cfg), atol=1e-12)


def test_descriptor_normalized_and_clipped(rng):
    img = rng.uniform(0, 255, size=(80, 80))
    f = extract_hog(img, [[40, 40], [20, 60]]).reshape(2, -1)
    assert np.allclose(np.linalg.norm(f, axis=1), 1.0, atol=1e-6)
    # after clipping at 0.2 and renormalizing, no entry can exceed 0.2 by much
    assert f.max() < 0.4


def test_border_clamping(rng):
    img = rng.uniform(0, 255, size=(40, 40))
    f = extract_hog(img, [[0, 0], [39, 39], [-100, 500]])
    assert np.all(np.isfinite(f))


def test_hog_config_validation():
    with pytest.raises(ParameterError):
        HogConfig(cell_size=0)


def test_landmark_set_invariants():
    with pytest.raises(ParameterError):
        LandmarkSet(["a", "a"], [[0, 0], [1, 1]])
    with pytest.raises(ParameterError):
        LandmarkSet(["a"], [[np.nan, 0]])
    with pytest.raises(DimensionError):
        LandmarkSet(["a", "b"], [[0, 0]])
    ls = LandmarkSet(["a", "b", "c"], [[0, 0], [1, 1], [2, 2]])
    assert np.array_equal(ls.subset(["c", "a"]).points, [[2, 2], [0, 0]])


# -- cascade ----------------------------------------------------------------


@pytest.fixture(scope="module")
def corpus(head_model, head_chart, head_texture):
    rng = np.random.default_rng(2024)
    out = []
    for _ in range(140):
        s = random_sample(head_model, head_chart, head_texture, rng, size=160, face_px=(90, 115))
        out.append((s["image"], LandmarkSet(s["names"], s["points"]), s["box"]))
    return out


@pytest.fixture(scope="module")
def cascade(corpus):
    return train_cascade(corpus[:110], stages=3, ridge=10.0, seed=3)


def test_training_error_decreases(cascade):
    e = cascade.training_errors
    assert len(e) == 4
    assert all(b < a for a, b in zip(e, e[1:]))
    assert e[-1] < 0.5 * e[0]


def test_held_out_error_halves(cascade, corpus):
    init, final = [], []
    for image, truth, box in corpus[110:]:
        init.append(normalized_error(cascade.initial_points(box), truth.points, box))
        final.append(normalized_error(detect_landmarks(image, box, cascade).points, truth.points, box))
    assert np.mean(final) <= 0.5 * np.mean(init)


def test_detect_contract(cascade, corpus):
    image, truth, box = corpus[120]
    res = detect_landmarks(image, box, cascade)
    assert res.names == truth.names == cascade.names
    assert len(res) == 49 and np.all(np.isfinite(res.points))


def test_fixed_point_near_truth(cascade, corpus):
    worst = np.zeros(cascade.num_stages)
    for image, truth, box in corpus[:10]:
        for s in range(cascade.num_stages):
            step = cascade.stage_update(s, image, truth.points, box)
            worst[s] = max(worst[s], np.mean(np.linalg.norm(step, axis=1)) / box_diagonal(box))
    assert np.all(worst < 0.02), f"worst step per stage as a fraction of the box diagonal: {worst}"


def test_translation_equivariance(cascade, corpus):
    image, _, box = corpus[115]
    dx, dy = 7, 4
    shifted = np.zeros((image.shape[0] + dy, image.shape[1] + dx, 3), np.uint8)
    shifted[dy:, dx:] = image
    # replicate the border so clamped samples agree too
    shifted[:dy, dx:] = image[:1]
    shifted[:, :dx] = shifted[:, dx:dx + 1]
    a = detect_landmarks(image, box, cascade).points
    b = detect_landmarks(shifted, (box[0] + dx, box[1] + dy, box[2], box[3]), cascade).points
    assert np.allclose(b - a, [dx, dy], atol=1e-8)


def test_zero_area_box(cascade, corpus):
    with pytest.raises(ParameterError):
        detect_landmarks(corpus[0][0], (10, 10, 0, 50), cascade)
    with pytest.raises(ParameterError):
        box_size((0, 0, 10, -1))


def test_single_stage_equals_ridge_oracle(corpus):
    samples = corpus[:100]
    cas = train_cascade(samples, stages=1, ridge=5.0, perturbations=2, seed=11)
    # rebuild the regression problem independently
    boxes = np.array([s[2] for s in samples])
    truths = np.array([s[1].points for s in samples])
    mean = np.mean((truths - boxes[:, None, :2]) / boxes[:, None, 2:], axis=0)
    idx, init = perturbed_initializations(samples, mean, 2, 11)
    sizes = (boxes[idx, 2] + boxes[idx, 3]) / 2
    X = np.stack([extract_hog(samples[i][0], init[k], scale=sizes[k] / 128.0) for k, i in enumerate(idx)])
    Y = ((truths[idx] - init) / sizes[:, None, None]).reshape(len(idx), -1)
    # primal normal equations with an unpenalized bias column
    Xa = np.hstack([X, np.ones((len(X), 1))])
    pen = 5.0 * np.eye(Xa.shape[1])
    pen[-1, -1] = 0.0
    sol = np.linalg.solve(Xa.T @ Xa + pen, Xa.T @ Y)
    assert np.allclose(cas.weights[0], sol[:-1], atol=1e-8)
    assert np.allclose(cas.biases[0], sol[-1], atol=1e-8)


def test_training_is_deterministic(corpus):
    a = train_cascade(corpus[:100], stages=2, perturbations=1, seed=5)
    b = train_cascade(list(corpus[:100]), stages=2, perturbations=1, seed=5)
    for wa, wb in zip(a.weights, b.weights):
        assert np.array_equal(wa, wb)


def test_training_preconditions(corpus):
    with pytest.raises(ParameterError):
        train_cascade(corpus[:20])
    renamed = [(img, LandmarkSet([n + "x" for n in lm.names], lm.points), box) for img, lm, box in corpus[:100]]
    with pytest.raises(ParameterError):
        train_cascade(corpus[:50] + renamed[:50])


def test_ridge_rank_error(rng):
    X = np.ones((10, 4))
    with pytest.raises(RankError):
        ridge_regression(X, rng.normal(size=(10, 2)), 1.0)
    X = rng.normal(size=(10, 4))
    X[:, 3] = X[:, 2]
    with pytest.raises(RankError):
        ridge_regression(X, rng.normal(size=(10, 2)), 0.0)


def test_ridge_primal_and_dual_agree(rng):
    Y = rng.normal(size=(30, 3))
    X = rng.normal(size=(30, 50))
    W, b = ridge_regression(X, Y, 2.0)  # dual path (n < d)
    Xa = np.hstack([X, np.ones((30, 1))])
    pen = 2.0 * np.eye(51)
    pen[-1, -1] = 0
    sol = np.linalg.solve(Xa.T @ Xa + pen, Xa.T @ Y)
    assert np.allclose(W, sol[:-1], atol=1e-9) and np.allclose(b, sol[-1], atol=1e-9)


def test_cascade_round_trip(cascade, tmp_path):
    path = tmp_path / "c.mfc"
    save_cascade(cascade, path)
    back = load_cascade(path)
    assert back.names == cascade.names and back.hog == cascade.hog
    assert back.training_errors == cascade.training_errors
    for a, b in zip(back.weights, cascade.weights):
        assert a.tobytes() == b.tobytes()
    blob = path.read_bytes()
    path.write_bytes(blob[:-5])
    with pytest.raises(ModelFormatError):
        load_cascade(path)


def test_cascade_shape_validation():
    with pytest.raises(DimensionError):
        RegressorCascade(("a",), np.zeros((1, 2)), HogConfig(), [np.zeros((3, 2))], [np.zeros(2)])
