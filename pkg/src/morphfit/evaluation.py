"""Verification analytics: DET curves, FRR at a FAR operating point, yaw bins
and improvement-over-baseline curves.

Conventions: a pair is accepted when ``score >= threshold``; pairs of an
image with itself are ignored; yaw bins are half-open ``[lo, hi)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionError,
    IdMismatchError,
    InsufficientDataError,
    MissingAnnotationError,
    ParameterError,
)


@dataclass(frozen=True, eq=False)
class ScoreMatrix:
    """Similarity scores, probes along rows and gallery along columns."""

    probe_ids: tuple
    gallery_ids: tuple
    scores: np.ndarray
    subjects: dict
    yaw: dict = field(default_factory=dict)

    def __post_init__(self):
        probes = tuple(str(i) for i in self.probe_ids)
        gallery = tuple(str(i) for i in self.gallery_ids)
        scores = np.array(self.scores, dtype=np.float64).reshape(len(probes), len(gallery))
        subjects = {str(k): str(v) for k, v in self.subjects.items()}
        missing = [i for i in set(probes) | set(gallery) if i not in subjects]
        if missing:
            raise ParameterError(f"no subject label for ids: {sorted(missing)}")
        object.__setattr__(self, "probe_ids", probes)
        object.__setattr__(self, "gallery_ids", gallery)
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "subjects", subjects)
        object.__setattr__(self, "yaw", {str(k): float(v) for k, v in self.yaw.items()})

    def select(self, probe_ids=None, gallery_ids=None):
        """Sub-matrix view restricted to the given probes and/or gallery ids."""
        probes = self.probe_ids if probe_ids is None else tuple(probe_ids)
        gallery = self.gallery_ids if gallery_ids is None else tuple(gallery_ids)
        pi = {p: i for i, p in enumerate(self.probe_ids)}
        gi = {g: i for i, g in enumerate(self.gallery_ids)}
        rows = [pi[p] for p in probes]
        cols = [gi[g] for g in gallery]
        return ScoreMatrix(probes, gallery, self.scores[np.ix_(rows, cols)], self.subjects, self.yaw)

    def pairs(self):
        """Genuine and impostor score arrays, self-matches excluded."""
        P = np.asarray(self.probe_ids, dtype=object)
        G = np.asarray(self.gallery_ids, dtype=object)
        ps = np.asarray([self.subjects[p] for p in self.probe_ids], dtype=object)
        gs = np.asarray([self.subjects[g] for g in self.gallery_ids], dtype=object)
        not_self = P[:, None] != G[None, :]
        same = ps[:, None] == gs[None, :]
        return self.scores[same & not_self], self.scores[~same & not_self]

    def transformed(self, fn):
        return ScoreMatrix(self.probe_ids, self.gallery_ids, fn(self.scores), self.subjects, self.yaw)


@dataclass(frozen=True, eq=False)
class DetCurve:
    thresholds: np.ndarray
    far: np.ndarray
    frr: np.ndarray

    def __len__(self):
        return len(self.thresholds)

    def points(self):
        return np.column_stack([self.far, self.frr])


def compute_det(scores):
    """FAR/FRR at every distinct score plus a final +inf threshold.

    The curve therefore always ends at (FAR 0, FRR 1).
    """
    genuine, impostor = scores.pairs() if isinstance(scores, ScoreMatrix) else scores
    genuine = np.sort(np.asarray(genuine, dtype=np.float64))
    impostor = np.sort(np.asarray(impostor, dtype=np.float64))
    if genuine.size == 0 or impostor.size == 0:
        raise InsufficientDataError(
            f"need genuine and impostor pairs, got {genuine.size} genuine / {impostor.size} impostor")
    thr = np.unique(np.concatenate([genuine, impostor]))
    thr = np.append(thr, np.inf)
    # accepted impostors: score >= t ; rejected genuines: score < t
    far = (impostor.size - np.searchsorted(impostor, thr, side="left")) / impostor.size
    frr = np.searchsorted(genuine, thr, side="left") / genuine.size
    return DetCurve(thr, far, frr)


def rates_at_threshold(scores, threshold):
    genuine, impostor = scores.pairs()
    return float(np.mean(impostor >= threshold)), float(np.mean(genuine < threshold))


def frr_at_far(curve, far_target):
    """FRR at the operating point ``far_target``.

    Walking the thresholds upwards, the first sample with FAR <= target and
    its predecessor bracket the target; FRR is interpolated linearly in FAR
    between them. If the very first sample already satisfies the target its
    FRR is returned.
    """
    if len(curve) == 0:
        raise InsufficientDataError("empty DET curve")
    if not 0 < far_target < 1:
        raise ParameterError(f"far_target must lie in (0, 1), got {far_target}")
    ok = np.nonzero(curve.far <= far_target)[0]
    if ok.size == 0:
        return float(curve.frr[-1])
    b = ok[0]
    if b == 0 or curve.far[b] == far_target:
        return float(curve.frr[b])
    a = b - 1
    t = (far_target - curve.far[a]) / (curve.far[b] - curve.far[a])
    return float(curve.frr[a] + t * (curve.frr[b] - curve.frr[a]))


def yaw_bins(bin_width=10.0, yaw_range=70.0):
    """Half-open bins ``[lo, lo + width)`` covering ``[-range, range)``."""
    if bin_width <= 0:
        raise ParameterError("bin_width must be positive")
    n = int(round(2 * yaw_range / bin_width))
    edges = -yaw_range + bin_width * np.arange(n + 1)
    return [(float(lo), float(hi)) for lo, hi in zip(edges[:-1], edges[1:])]


def bin_by_yaw(scores, bin_width=10.0, yaw_range=70.0):
    """Split probes by yaw; returns ``[(centre, (lo, hi), ScoreMatrix), ...]``.

    Empty bins are kept with an empty probe list. Probes outside
    ``[-range, range)`` fall in no bin.
    """
    missing = [p for p in scores.probe_ids if p not in scores.yaw]
    if missing:
        raise MissingAnnotationError(missing)
    out = []
    for lo, hi in yaw_bins(bin_width, yaw_range):
        members = [p for p in scores.probe_ids if lo <= scores.yaw[p] < hi]
        out.append(((lo + hi) / 2, (lo, hi), scores.select(probe_ids=members)))
    return out


def binned_frr(scores, far_target=0.01, bin_width=10.0, yaw_range=70.0):
    """FRR at ``far_target`` per yaw bin; NaN where a bin cannot form a curve."""
    rows = []
    for centre, _, view in bin_by_yaw(scores, bin_width, yaw_range):
        try:
            rows.append((centre, frr_at_far(compute_det(view), far_target)))
        except InsufficientDataError:
            rows.append((centre, float("nan")))
    return rows


@dataclass(frozen=True)
class ImprovementCurve:
    centres: tuple
    delta_frr: tuple
    far_target: float


def improvement_curve(baseline, method, far_target=0.01, bin_width=10.0, yaw_range=70.0):
    """Per-bin ``FRR_baseline - FRR_method`` at ``far_target`` (positive = method better)."""
    for a, b in ((baseline.probe_ids, method.probe_ids), (baseline.gallery_ids, method.gallery_ids)):
        diff = set(a) ^ set(b)
        if diff:
            raise IdMismatchError(diff)
    method = method.select(baseline.probe_ids, baseline.gallery_ids)
    base = binned_frr(baseline, far_target, bin_width, yaw_range)
    meth = binned_frr(method, far_target, bin_width, yaw_range)
    return ImprovementCurve(
        tuple(c for c, _ in base),
        tuple(fb - fm for (_, fb), (_, fm) in zip(base, meth)),
        far_target,
    )


def gallery_by_yaw(scores, centre, half_width=5.0):
    """Gallery ids whose yaw lies in ``[centre - half_width, centre + half_width)``."""
    missing = [g for g in scores.gallery_ids if g not in scores.yaw]
    if missing:
        raise MissingAnnotationError(missing)
    return [g for g in scores.gallery_ids if centre - half_width <= scores.yaw[g] < centre + half_width]


# --------------------------------------------------------------------------
# CSV formats


def read_score_matrix(scores_path, labels_path):
    """Scores CSV (header row = gallery ids, first column = probe ids) plus a
    labels CSV with columns ``id,subject,yaw`` (yaw may be empty)."""
    with open(labels_path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"id", "subject"} <= set(reader.fieldnames):
            raise DimensionError("labels CSV needs columns id,subject[,yaw]")
        subjects, yaw = {}, {}
        for row in reader:
            subjects[row["id"]] = row["subject"]
            if row.get("yaw") not in (None, ""):
                yaw[row["id"]] = float(row["yaw"])
    with open(scores_path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DimensionError("scores CSV is empty")
    gallery = rows[0][1:]
    probes, data = [], []
    for r in rows[1:]:
        if not r:
            continue
        if len(r) != len(gallery) + 1:
            raise DimensionError(f"row for probe {r[0]!r} has {len(r) - 1} scores, expected {len(gallery)}")
        probes.append(r[0])
        data.append([float(v) for v in r[1:]])
    return ScoreMatrix(probes, gallery, np.asarray(data).reshape(len(probes), len(gallery)), subjects, yaw)


def write_score_matrix(scores, scores_path, labels_path):
    with open(scores_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["probe", *scores.gallery_ids])
        for pid, row in zip(scores.probe_ids, scores.scores):
            w.writerow([pid, *(repr(float(v)) for v in row)])
    with open(labels_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "subject", "yaw"])
        for i in dict.fromkeys(scores.probe_ids + scores.gallery_ids):
            w.writerow([i, scores.subjects[i], repr(scores.yaw[i]) if i in scores.yaw else ""])


def write_det_csv(curve, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold", "far", "frr"])
        for t, a, r in zip(curve.thresholds, curve.far, curve.frr):
            w.writerow([repr(float(t)), repr(float(a)), repr(float(r))])
