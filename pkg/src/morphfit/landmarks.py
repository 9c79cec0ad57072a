"""Cascaded-regression landmark detection on HOG features.

Each stage is a linear map from the concatenated per-landmark HOG
descriptors (sampled around the current estimates) to a landmark update,
expressed in units of the face-box size.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _container
from .errors import DimensionError, ModelFormatError, ParameterError, RankError

MAGIC = "MORPHFIT-CASCADE"
VERSION = 1
REFERENCE_BOX = 128.0


@dataclass(frozen=True)
class HogConfig:
    cell_size: int = 8
    num_cells: int = 3
    num_bins: int = 9

    def __post_init__(self):
        if min(self.cell_size, self.num_cells, self.num_bins) < 1:
            raise ParameterError("HOG parameters must all be positive")

    @property
    def patch_size(self):
        return self.cell_size * self.num_cells

    @property
    def length(self):
        return self.num_cells ** 2 * self.num_bins


@dataclass(frozen=True, eq=False)
class LandmarkSet:
    names: tuple
    points: np.ndarray

    def __post_init__(self):
        names = tuple(str(n) for n in self.names)
        pts = np.array(self.points, dtype=np.float64).reshape(-1, 2)
        if len(names) != len(pts):
            raise DimensionError(f"{len(names)} names for {len(pts)} points")
        if len(set(names)) != len(names):
            raise ParameterError("landmark names must be unique")
        if not np.all(np.isfinite(pts)):
            raise ParameterError("landmark coordinates must be finite")
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "points", pts)

    def __iter__(self):
        return iter(zip(self.names, self.points))

    def __len__(self):
        return len(self.names)

    def subset(self, names):
        index = {n: i for i, n in enumerate(self.names)}
        return LandmarkSet(tuple(names), self.points[[index[n] for n in names]])


def to_gray(image):
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3:
        img = img[..., :3] @ np.array([0.299, 0.587, 0.114])
    return img


def _sample(img, x, y):
    h, w = img.shape
    x = np.clip(x, 0.0, w - 1.0)
    y = np.clip(y, 0.0, h - 1.0)
    x0 = np.minimum(np.floor(x).astype(np.int64), max(w - 2, 0))
    y0 = np.minimum(np.floor(y).astype(np.int64), max(h - 2, 0))
    fx = x - x0
    fy = y - y0
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    return ((img[y0, x0] * (1 - fx) + img[y0, x1] * fx) * (1 - fy)
            + (img[y1, x0] * (1 - fx) + img[y1, x1] * fx) * fy)


def _cell_weights(n, cell_size, num_cells):
    """(num_cells, n) bilinear weights of each patch row/column to each cell centre."""
    pos = (np.arange(n) + 0.5) / cell_size - 0.5
    c0 = np.floor(pos).astype(np.int64)
    f = pos - c0
    w = np.zeros((num_cells + 2, n))
    w[c0 + 1, np.arange(n)] = 1 - f
    w[c0 + 2, np.arange(n)] += f
    return w[1:-1]


def extract_hog(image, points, config=None, scale=1.0):
    """Concatenated HOG descriptors of square patches centred on ``points``.

    Each patch spans ``num_cells * cell_size`` samples spaced ``scale`` pixels
    apart. Gradients use central differences; votes are interpolated
    trilinearly over cell position and orientation (unsigned, 0-180 deg);
    each landmark's descriptor is L2-Hys normalized (clip 0.2).
    Out-of-image samples are clamped to the border.
    """
    config = config or HogConfig()
    img = to_gray(image)
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    L = len(pts)
    n = config.patch_size
    nc, nb, cs = config.num_cells, config.num_bins, config.cell_size
    offs = (np.arange(n + 2) - (n + 1) / 2.0) * scale
    xs = pts[:, 0, None, None] + offs[None, None, :]
    ys = pts[:, 1, None, None] + offs[None, :, None]
    patch = _sample(img, np.broadcast_to(xs, (L, n + 2, n + 2)), np.broadcast_to(ys, (L, n + 2, n + 2)))
    gx = (patch[:, 1:-1, 2:] - patch[:, 1:-1, :-2]) / 2.0
    gy = (patch[:, 2:, 1:-1] - patch[:, :-2, 1:-1]) / 2.0
    mag = np.hypot(gx, gy)
    ang = np.rad2deg(np.arctan2(gy, gx)) % 180.0

    # orientation interpolation between neighbouring bin centres
    bpos = ang / (180.0 / nb) - 0.5
    b0 = np.floor(bpos).astype(np.int64)
    fb = bpos - b0
    votes = np.zeros((L, n, n, nb))
    np.put_along_axis(votes, (b0 % nb)[..., None], (mag * (1 - fb))[..., None], axis=3)
    # b0 and b0+1 differ, so the second vote never overwrites the first
    np.put_along_axis(votes, ((b0 + 1) % nb)[..., None], (mag * fb)[..., None], axis=3)
    # spatial interpolation between neighbouring cell centres, separable in x and y
    wc = _cell_weights(n, cs, nc)
    hist = np.einsum("yp,lpqb,xq->lyxb", wc, votes, wc, optimize=True)
    desc = hist.reshape(L, -1)
    norm = np.sqrt(np.sum(desc ** 2, axis=1, keepdims=True) + 1e-6)
    desc = np.minimum(desc / norm, 0.2)
    norm = np.sqrt(np.sum(desc ** 2, axis=1, keepdims=True) + 1e-6)
    return (desc / norm).ravel()


# --------------------------------------------------------------------------
# cascade


def _box(face_box):
    x, y, w, h = (float(v) for v in face_box)
    if not (w > 0 and h > 0) or not np.all(np.isfinite([x, y, w, h])):
        raise ParameterError(f"face box must have positive width and height, got {face_box}")
    return x, y, w, h


def box_size(face_box):
    _, _, w, h = _box(face_box)
    return (w + h) / 2.0


def box_diagonal(face_box):
    _, _, w, h = _box(face_box)
    return float(np.hypot(w, h))


@dataclass(frozen=True, eq=False)
class RegressorCascade:
    names: tuple
    mean_landmarks: np.ndarray  # (L, 2) inside the unit face box
    hog: HogConfig
    weights: list  # per stage (D, 2L)
    biases: list  # per stage (2L,)
    reference_box: float = REFERENCE_BOX
    training_errors: list = field(default_factory=list)

    def __post_init__(self):
        L = len(self.names)
        if self.mean_landmarks.shape != (L, 2):
            raise DimensionError("mean_landmarks must be (L, 2)")
        if not self.weights or len(self.weights) != len(self.biases):
            raise DimensionError("cascade needs >= 1 stage with matching biases")
        D = L * self.hog.length
        for W, b in zip(self.weights, self.biases):
            if W.shape != (D, 2 * L) or b.shape != (2 * L,):
                raise DimensionError(f"stage shapes {W.shape}, {b.shape} inconsistent with L={L}")

    @property
    def num_stages(self):
        return len(self.weights)

    def initial_points(self, face_box):
        x, y, w, h = _box(face_box)
        return np.array([x, y]) + self.mean_landmarks * np.array([w, h])

    def features(self, image, points, face_box):
        return extract_hog(image, points, self.hog, box_size(face_box) / self.reference_box)

    def stage_update(self, stage, image, points, face_box):
        f = self.features(image, points, face_box)
        delta = f @ self.weights[stage] + self.biases[stage]
        return delta.reshape(-1, 2) * box_size(face_box)


def detect_landmarks(image, face_box, cascade, return_trajectory=False):
    """Run the cascade from the mean shape placed in ``face_box`` (x, y, w, h)."""
    pts = cascade.initial_points(face_box)
    traj = [pts]
    for s in range(cascade.num_stages):
        pts = pts + cascade.stage_update(s, image, pts, face_box)
        traj.append(pts)
    result = LandmarkSet(cascade.names, pts)
    if return_trajectory:
        return result, traj
    return result


def normalized_error(points, truth, face_box):
    """Mean point-to-point distance as a fraction of the face-box diagonal."""
    d = np.linalg.norm(np.asarray(points) - np.asarray(truth), axis=-1)
    return float(d.mean() / box_diagonal(face_box))


def _unpack(sample):
    if isinstance(sample, dict):
        return sample["image"], sample["landmarks"], sample["box"]
    return sample


def perturbed_initializations(samples, mean_landmarks, perturbations, seed, translation=0.1, scale=0.1):
    """Initial estimates for training: the mean shape in each box, jittered.

    Translation is uniform in +-``translation`` and scale in +-``scale`` of the
    box size. Returns ``(sample_index, points)`` arrays.
    """
    rng = np.random.default_rng(seed)
    idx, inits = [], []
    for i, sample in enumerate(samples):
        _, _, box = _unpack(sample)
        x, y, w, h = _box(box)
        for _ in range(perturbations):
            t = rng.uniform(-translation, translation, size=2) * np.array([w, h])
            s = 1.0 + rng.uniform(-scale, scale)
            centre = np.array([x + w / 2, y + h / 2]) + t
            pts = centre + (mean_landmarks - 0.5) * s * np.array([w, h])
            idx.append(i)
            inits.append(pts)
    return np.asarray(idx), np.asarray(inits)


def ridge_regression(X, Y, ridge):
    """Ridge regression with an unpenalized bias; returns ``(W, b)``."""
    xm = X.mean(axis=0)
    ym = Y.mean(axis=0)
    Xc = X - xm
    Yc = Y - ym
    n, d = Xc.shape
    if not np.any(Xc):
        raise RankError("feature matrix has zero variance (rank 0)")
    if ridge == 0 and np.linalg.matrix_rank(Xc) < d:
        raise RankError("feature matrix is rank deficient and ridge is 0")
    if d <= n:
        W = np.linalg.solve(Xc.T @ Xc + ridge * np.eye(d), Xc.T @ Yc)
    else:
        W = Xc.T @ np.linalg.solve(Xc @ Xc.T + ridge * np.eye(n), Yc)
    return W, ym - xm @ W


MIN_TRAINING_SAMPLES = 100


def train_cascade(samples, stages=4, ridge=10.0, hog=None, perturbations=4, seed=0,
                  reference_box=REFERENCE_BOX, min_samples=MIN_TRAINING_SAMPLES):
    """Supervised-descent training.

    ``samples`` holds ``(image, LandmarkSet, face_box)`` triples (or dicts with
    those keys). Each stage regresses the remaining box-normalized
    displacement from features at the current estimates, then applies itself
    to produce the next stage's estimates.
    """
    hog = hog or HogConfig()
    samples = list(samples)
    if len(samples) < max(1, min_samples):
        raise ParameterError(f"need >= {max(1, min_samples)} training samples, got {len(samples)}")
    if stages < 1:
        raise ParameterError("stages must be >= 1")
    names = tuple(_unpack(samples[0])[1].names)
    truths, boxes = [], []
    for s in samples:
        _, lms, box = _unpack(s)
        if tuple(lms.names) != names:
            raise ParameterError("all samples must use the same landmark names in the same order")
        truths.append(lms.points)
        boxes.append(_box(box))
    truths = np.asarray(truths)
    boxes = np.asarray(boxes)
    mean = np.mean((truths - boxes[:, None, :2]) / boxes[:, None, 2:], axis=0)

    idx, current = perturbed_initializations(samples, mean, perturbations, seed)
    sizes = (boxes[idx, 2] + boxes[idx, 3]) / 2.0
    diags = np.hypot(boxes[idx, 2], boxes[idx, 3])
    target = truths[idx]

    def error(pts):
        return float(np.mean(np.linalg.norm(pts - target, axis=2).mean(axis=1) / diags))

    errors = [error(current)]
    weights, biases = [], []
    for _ in range(stages):
        X = np.stack([
            extract_hog(_unpack(samples[i])[0], current[k], hog, sizes[k] / reference_box)
            for k, i in enumerate(idx)
        ])
        Y = ((target - current) / sizes[:, None, None]).reshape(len(idx), -1)
        W, b = ridge_regression(X, Y, ridge)
        weights.append(W)
        biases.append(b)
        current = current + (X @ W + b).reshape(current.shape) * sizes[:, None, None]
        errors.append(error(current))
    return RegressorCascade(names, mean, hog, weights, biases, reference_box, errors)


def save_cascade(cascade, path):
    L = len(cascade.names)
    header = [
        f"landmarks {L}",
        f"stages {cascade.num_stages}",
        f"cell_size {cascade.hog.cell_size}",
        f"num_cells {cascade.hog.num_cells}",
        f"num_bins {cascade.hog.num_bins}",
        f"reference_box {cascade.reference_box!r}",
    ]
    header += [f"name {n}" for n in cascade.names]
    if cascade.training_errors:
        header.append("training_errors " + " ".join(repr(float(e)) for e in cascade.training_errors))
    arrays = [cascade.mean_landmarks]
    for W, b in zip(cascade.weights, cascade.biases):
        arrays += [W, b]
    _container.dump(path, MAGIC, VERSION, header, arrays)


def load_cascade(path):
    rd = _container.Reader(path, MAGIC, VERSION)
    L = rd.int_field("landmarks", 1)
    S = rd.int_field("stages", 1)
    hog = HogConfig(rd.int_field("cell_size", 1), rd.int_field("num_cells", 1), rd.int_field("num_bins", 1))
    ref = rd.float_field("reference_box")
    names = [r[0] for r in rd.records("name") if r]
    if len(names) != L:
        raise ModelFormatError("name", f"declared {L} landmarks, found {len(names)} names")
    mean = rd.array("mean_landmarks", "f8", (L, 2))
    D = L * hog.length
    weights, biases = [], []
    for s in range(S):
        weights.append(rd.array(f"stage{s}.weights", "f8", (D, 2 * L)))
        biases.append(rd.array(f"stage{s}.bias", "f8", (2 * L,)))
    rd.finish()
    errors = []
    for rec in rd.records("training_errors"):
        try:
            errors = [float(v) for v in rec]
        except ValueError as exc:
            raise ModelFormatError("training_errors", "not a list of numbers") from exc
    return RegressorCascade(tuple(names), mean, hog, weights, biases, ref, errors)
