"""PCA morphable face model: data container, instantiation, persistence and a
synthetic generator.

Shapes are stored interleaved, ``[x1, y1, z1, ..., xV, yV, zV]``. Shape
coefficients are expressed in standard-deviation units, so a coefficient
vector ``alpha`` produces ``mean + basis @ (alpha * stddevs)``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from . import _container
from .errors import DimensionError, ModelFormatError, ParameterError

MAGIC = "MORPHFIT-MODEL"
VERSION = 1

ORTHO_TOL = 1e-8

# Landmarks use the iBUG-68 numbering; the 49-point set drops the jaw contour
# and the two inner mouth corners (61, 65).
LANDMARKS_49 = [str(i) for i in range(18, 69) if i not in (61, 65)]
LANDMARKS_13 = ["18", "22", "23", "27", "31", "34", "37", "40", "43", "46", "49", "55", "58"]
LANDMARKS_7 = ["31", "37", "40", "43", "46", "49", "55"]
LANDMARK_SETS = {7: LANDMARKS_7, 13: LANDMARKS_13, 49: LANDMARKS_49}

# Canonical positions inside a unit face box (x right, y down).
CANONICAL_LANDMARKS = {
    "18": (0.10, 0.20), "19": (0.18, 0.14), "20": (0.28, 0.13), "21": (0.37, 0.15),
    "22": (0.45, 0.19), "23": (0.55, 0.19), "24": (0.63, 0.15), "25": (0.72, 0.13),
    "26": (0.82, 0.14), "27": (0.90, 0.20),
    "28": (0.50, 0.28), "29": (0.50, 0.36), "30": (0.50, 0.44), "31": (0.50, 0.52),
    "32": (0.40, 0.58), "33": (0.45, 0.60), "34": (0.50, 0.61), "35": (0.55, 0.60),
    "36": (0.60, 0.58),
    "37": (0.19, 0.29), "38": (0.24, 0.26), "39": (0.30, 0.26), "40": (0.36, 0.30),
    "41": (0.30, 0.32), "42": (0.24, 0.32),
    "43": (0.64, 0.30), "44": (0.70, 0.26), "45": (0.76, 0.26), "46": (0.81, 0.29),
    "47": (0.76, 0.32), "48": (0.70, 0.32),
    "49": (0.33, 0.74), "50": (0.39, 0.70), "51": (0.45, 0.68), "52": (0.50, 0.69),
    "53": (0.55, 0.68), "54": (0.61, 0.70), "55": (0.67, 0.74), "56": (0.61, 0.79),
    "57": (0.55, 0.81), "58": (0.50, 0.82), "59": (0.45, 0.81), "60": (0.39, 0.79),
    "62": (0.44, 0.73), "63": (0.50, 0.735), "64": (0.56, 0.73),
    "66": (0.56, 0.75), "67": (0.50, 0.755), "68": (0.44, 0.75),
}


def _frozen(arr, dtype=np.float64):
    arr = np.array(arr, dtype=dtype, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class MorphableModel:
    """Shape (and optional colour) PCA model over a fixed triangle mesh.

    Arrays are copied and made read-only on construction; all invariants are
    checked eagerly so a constructed model is always valid.
    """

    mean_shape: np.ndarray
    shape_basis: np.ndarray
    shape_stddevs: np.ndarray
    triangles: np.ndarray
    landmark_map: dict = field(default_factory=dict)
    colour_mean: np.ndarray | None = None
    colour_basis: np.ndarray | None = None
    colour_stddevs: np.ndarray | None = None

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "mean_shape", _frozen(self.mean_shape).ravel())
        set_(self, "shape_basis", _frozen(self.shape_basis))
        set_(self, "shape_stddevs", _frozen(self.shape_stddevs).ravel())
        set_(self, "triangles", _frozen(self.triangles, np.int64).reshape(-1, 3))
        set_(self, "landmark_map", {str(k): int(v) for k, v in self.landmark_map.items()})
        if self.colour_mean is not None:
            set_(self, "colour_mean", _frozen(self.colour_mean).ravel())
            set_(self, "colour_basis", _frozen(self.colour_basis))
            set_(self, "colour_stddevs", _frozen(self.colour_stddevs).ravel())
        self._validate()

    def _validate(self):
        n = self.mean_shape.size
        if n == 0 or n % 3:
            raise DimensionError("mean_shape length must be a positive multiple of 3")
        _check_basis("shape", self.shape_basis, self.shape_stddevs, n)
        if self.colour_mean is not None:
            if self.colour_mean.size != n:
                raise DimensionError("colour_mean must have length 3V")
            if self.colour_basis is None or self.colour_stddevs is None:
                raise DimensionError("colour model needs basis and stddevs")
            _check_basis("colour", self.colour_basis, self.colour_stddevs, n)
        if not np.all(np.isfinite(self.mean_shape)):
            raise ParameterError("mean_shape has non-finite entries")
        v = self.vertex_count
        if self.triangles.size == 0:
            raise DimensionError("model needs at least one triangle")
        if self.triangles.min() < 0 or self.triangles.max() >= v:
            raise DimensionError("triangle index out of range")
        for name, idx in self.landmark_map.items():
            if not 0 <= idx < v:
                raise DimensionError(f"landmark {name!r} vertex index {idx} out of range")
        ncomp = mesh_components(self.triangles, v)
        if ncomp != 1:
            raise DimensionError(f"triangulation must be connected, found {ncomp} components")

    @property
    def vertex_count(self):
        return self.mean_shape.size // 3

    @property
    def num_coeffs(self):
        return self.shape_basis.shape[1]

    @property
    def num_colour_coeffs(self):
        return 0 if self.colour_basis is None else self.colour_basis.shape[1]

    @property
    def has_colour(self):
        return self.colour_mean is not None

    @property
    def fingerprint(self):
        """Hex digest of topology and mean shape; identifies the model's isomap chart."""
        fp = self.__dict__.get("_fingerprint")
        if fp is None:
            h = hashlib.sha256()
            h.update(np.ascontiguousarray(self.triangles, dtype="<i8").tobytes())
            h.update(np.ascontiguousarray(self.mean_shape, dtype="<f8").tobytes())
            fp = h.hexdigest()
            object.__setattr__(self, "_fingerprint", fp)
        return fp

    def landmark_vertices(self, names):
        from .errors import LandmarkMappingError

        out = []
        for name in names:
            if name not in self.landmark_map:
                raise LandmarkMappingError(name)
            out.append(self.landmark_map[name])
        return np.asarray(out, dtype=np.int64)

    def mean_points(self):
        return self.mean_shape.reshape(-1, 3)


def _check_basis(label, basis, stddevs, n):
    if basis.ndim != 2 or basis.shape[0] != n:
        raise DimensionError(f"{label}_basis must be 3V x K, got {basis.shape}")
    k = basis.shape[1]
    if stddevs.size != k:
        raise DimensionError(f"{label}_stddevs length {stddevs.size} != basis columns {k}")
    if not (np.all(np.isfinite(basis)) and np.all(np.isfinite(stddevs))):
        raise ParameterError(f"{label} model has non-finite entries")
    if k == 0:
        return
    if np.any(stddevs <= 0):
        raise ParameterError(f"{label}_stddevs must be strictly positive")
    if np.any(np.diff(stddevs) > 0):
        raise ParameterError(f"{label}_stddevs must be sorted non-increasing")
    gram = basis.T @ basis
    resid = np.abs(gram - np.eye(k)).max()
    if resid > ORTHO_TOL:
        raise ParameterError(f"{label}_basis is not orthonormal (max Gram deviation {resid:.3g})")


def mesh_components(triangles, vertex_count):
    """Number of edge-connected components, counting isolated vertices."""
    tri = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    rows = np.concatenate([tri[:, 0], tri[:, 1], tri[:, 2]])
    cols = np.concatenate([tri[:, 1], tri[:, 2], tri[:, 0]])
    graph = coo_matrix((np.ones(rows.size), (rows, cols)), shape=(vertex_count, vertex_count))
    n, _ = connected_components(graph, directed=False)
    return n


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray
    triangles: np.ndarray
    colours: np.ndarray | None = None
    model_fingerprint: str | None = None

    @property
    def points(self):
        """Vertices as a (V, 3) view."""
        return self.vertices.reshape(-1, 3)

    @property
    def vertex_count(self):
        return self.vertices.size // 3


def _combine(mean, basis, stddevs, coeffs, label):
    coeffs = np.asarray(coeffs, dtype=np.float64).ravel()
    k = basis.shape[1]
    if coeffs.size > k:
        raise DimensionError(f"{label} coefficient vector has length {coeffs.size} > {k}")
    if not np.all(np.isfinite(coeffs)):
        raise ParameterError(f"{label} coefficients must be finite")
    n = coeffs.size
    if n == 0:
        return mean.copy()
    return mean + basis[:, :n] @ (coeffs * stddevs[:n])


def instantiate(model, alpha, beta=None):
    """Build a mesh from shape coefficients ``alpha`` (and colour ``beta``).

    Coefficient vectors shorter than the basis use the leading components.
    """
    vertices = _combine(model.mean_shape, model.shape_basis, model.shape_stddevs, alpha, "shape")
    colours = None
    if beta is not None:
        if not model.has_colour:
            raise ParameterError("model has no colour PCA model")
        colours = _combine(model.colour_mean, model.colour_basis, model.colour_stddevs, beta, "colour")
    return Mesh(vertices, model.triangles, colours, model.fingerprint)


def save_model(model, path):
    header = [
        f"vertices {model.vertex_count}",
        f"coeffs {model.num_coeffs}",
        f"colour {int(model.has_colour)}",
        f"colour_coeffs {model.num_colour_coeffs}",
        f"triangles {len(model.triangles)}",
        f"landmarks {len(model.landmark_map)}",
    ]
    for name, idx in model.landmark_map.items():
        if not name or any(c.isspace() for c in name):
            raise ParameterError(f"landmark name {name!r} must be non-empty without whitespace")
        header.append(f"landmark {name} {idx}")
    arrays = [model.mean_shape, model.shape_basis, model.shape_stddevs]
    if model.has_colour:
        arrays += [model.colour_mean, model.colour_basis, model.colour_stddevs]
    arrays.append(model.triangles.astype(np.int64))
    _container.dump(path, MAGIC, VERSION, header, arrays)


def load_model(path):
    """Read a model container; raises :class:`ModelFormatError` naming the bad field."""
    rd = _container.Reader(path, MAGIC, VERSION)
    v = rd.int_field("vertices", 1)
    k = rd.int_field("coeffs", 0)
    has_colour = rd.int_field("colour", 0)
    kc = rd.int_field("colour_coeffs", 0)
    t = rd.int_field("triangles", 1)
    nl = rd.int_field("landmarks", 0)
    if has_colour not in (0, 1):
        raise ModelFormatError("colour", "must be 0 or 1")
    records = rd.records("landmark")
    if len(records) != nl:
        raise ModelFormatError("landmarks", f"declared {nl}, found {len(records)}")
    landmark_map = {}
    for rec in records:
        if len(rec) != 2:
            raise ModelFormatError("landmark", f"malformed record {' '.join(rec)!r}")
        try:
            idx = int(rec[1])
        except ValueError as exc:
            raise ModelFormatError("landmark", f"bad vertex index {rec[1]!r}") from exc
        if not 0 <= idx < v:
            raise ModelFormatError("landmark", f"landmark {rec[0]!r} vertex index out of range")
        if rec[0] in landmark_map:
            raise ModelFormatError("landmark", f"duplicate landmark {rec[0]!r}")
        landmark_map[rec[0]] = idx
    mean = rd.array("mean_shape", "f8", (3 * v,))
    basis = rd.array("shape_basis", "f8", (3 * v, k))
    stddevs = rd.array("shape_stddevs", "f8", (k,))
    colour = {}
    if has_colour:
        colour = dict(
            colour_mean=rd.array("colour_mean", "f8", (3 * v,)),
            colour_basis=rd.array("colour_basis", "f8", (3 * v, kc)),
            colour_stddevs=rd.array("colour_stddevs", "f8", (kc,)),
        )
    tris = rd.array("triangles", "i8", (t, 3))
    rd.finish()
    if tris.min() < 0 or tris.max() >= v:
        raise ModelFormatError("triangles", "triangle index out of range")
    if np.any(stddevs <= 0) or np.any(np.diff(stddevs) > 0):
        raise ModelFormatError("shape_stddevs", "must be positive and non-increasing")
    try:
        return MorphableModel(mean, basis, stddevs, tris, landmark_map, **colour)
    except (DimensionError, ParameterError) as exc:
        raise ModelFormatError("model", str(exc)) from exc


# --------------------------------------------------------------------------
# synthetic model


def _grid_shape(v):
    target = int(round(np.sqrt(v * 1.15)))
    for delta in range(0, max(2, target // 4)):
        for cols in (target + delta, target - delta):
            if cols >= 3 and v % cols == 0 and v // cols >= 3:
                return v // cols, cols, 0
    cols = max(3, target)
    return v // cols, cols, v % cols


def _grid_triangles(rows, cols, rem):
    tris = []
    for r in range(rows - 1):
        for c in range(cols - 1):
            a, b = r * cols + c, r * cols + c + 1
            d, e = a + cols, b + cols
            tris.append((a, d, b))
            tris.append((b, d, e))
    if rem:
        base = rows * cols
        last = (rows - 1) * cols
        if rem == 1:
            tris.append((last, base, last + 1))
        for c in range(rem - 1):
            a, b = last + c, last + c + 1
            d, e = base + c, base + c + 1
            tris.append((a, d, b))
            tris.append((b, d, e))
    return np.asarray(tris, dtype=np.int64)


def _head_surface(rows, cols, rem):
    n_rows = rows + (1 if rem else 0)
    lat = np.deg2rad(np.linspace(60.0, -65.0, n_rows))
    lon = np.deg2rad(np.linspace(-75.0, 75.0, cols))
    phi, theta = np.meshgrid(lat, lon, indexing="ij")
    phi = phi.ravel()[: rows * cols + rem]
    theta = theta.ravel()[: rows * cols + rem]
    a, b, c = 75.0, 95.0, 70.0
    x = a * np.sin(theta) * np.cos(phi)
    y = b * np.sin(phi)
    z = c * np.cos(theta) * np.cos(phi)
    # nose ridge peaking just above the nostrils
    ridge = np.clip((y + 20.0) / 45.0, 0.0, 1.0) * (y < 25.0)
    tip = np.exp(-((y + 18.0) ** 2) / (2 * 12.0 ** 2))
    z = z + 22.0 * np.exp(-(x ** 2) / (2 * 9.0 ** 2)) * np.maximum(ridge * 0.6, tip)
    # shallow eye sockets
    for ex in (-22.0, 22.0):
        z = z - 6.0 * np.exp(-((x - ex) ** 2 + (y - 10.0) ** 2) / (2 * 9.0 ** 2))
    return np.stack([x, y, z], axis=1)


def _place_landmarks(points, names):
    # map the unit face box onto the frontal part of the head
    xy = points[:, :2]
    front = points[:, 2] > 0
    taken = set()
    out = {}
    for name in names:
        u, v = CANONICAL_LANDMARKS[name]
        target = np.array([(u - 0.5) * 2 * 48.0, 45.0 - v * 120.0])
        d = np.sum((xy - target) ** 2, axis=1)
        d[~front] = np.inf
        for idx in np.argsort(d, kind="stable"):
            if int(idx) not in taken:
                taken.add(int(idx))
                out[name] = int(idx)
                break
    return out


def generate_synthetic_model(seed, V, K, colour=False):
    """Deterministic face-like model with ``V`` vertices and ``K`` shape components.

    The mesh is a triangulated half-ellipsoid with a nose ridge; the basis
    orthonormalizes ``K`` smooth sinusoidal deformation fields. All 49
    iBUG-numbered inner-face landmarks are attached to fixed vertices.
    """
    if V < 50:
        raise ParameterError(f"V must be >= 50, got {V}")
    if K < 1 or K >= V:
        raise ParameterError(f"need 1 <= K < V, got K={K}, V={V}")
    rows, cols, rem = _grid_shape(V)
    points = _head_surface(rows, cols, rem)
    tris = _grid_triangles(rows, cols, rem)
    rng = np.random.default_rng(seed)

    scaled = points / np.array([75.0, 95.0, 70.0])
    # identity variation concentrates on the inner face
    envelope = 0.1 + np.exp(-0.5 * ((points[:, 0] / 45.0) ** 2 + ((points[:, 1] + 12.0) / 55.0) ** 2))
    fields = np.empty((3 * V, K))
    for k in range(K):
        disp = np.zeros((V, 3))
        n_waves = 3
        for _ in range(n_waves):
            freq = rng.normal(0.0, 4.0 + 4.0 * k / K, size=3)
            phase = rng.uniform(0, 2 * np.pi)
            amp = rng.normal(0.0, 1.0, size=3)
            disp += np.sin(scaled @ freq + phase)[:, None] * amp
        fields[:, k] = (disp * envelope[:, None]).ravel()
    landmarks = _place_landmarks(points, LANDMARKS_49)
    fields = _remove_affine(fields, points, np.array(list(landmarks.values())))
    basis = _orthonormalize(fields)
    stddevs = 8.0 * np.sqrt(V) * (np.arange(1, K + 1) ** -0.6)

    model_kw = {}
    if colour:
        cfields = rng.normal(size=(3 * V, min(K, 10)))
        model_kw = dict(
            colour_mean=np.tile([0.80, 0.62, 0.52], V),
            colour_basis=_orthonormalize(cfields),
            colour_stddevs=0.05 * np.sqrt(V) / np.arange(1, cfields.shape[1] + 1),
        )
    return MorphableModel(points.ravel(), basis, stddevs, tris, landmarks, **model_kw)


def _remove_affine(fields, points, anchors):
    """Subtract from each field the affine motion that best explains it at ``anchors``.

    Mirrors Procrustes alignment of training scans on their landmarks: what
    remains at the landmark vertices is orthogonal to any affine motion of the
    mean, so the deformations cannot be absorbed by an affine camera.
    """
    V = len(points)
    hom = np.hstack([points, np.ones((V, 1))])
    H = hom[anchors]
    out = np.empty_like(fields)
    for k in range(fields.shape[1]):
        d = fields[:, k].reshape(V, 3)
        M, *_ = np.linalg.lstsq(H, d[anchors], rcond=None)
        out[:, k] = (d - hom @ M).ravel()
    return out


def _orthonormalize(fields):
    q, r = np.linalg.qr(fields)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    q = q * signs
    # one re-orthogonalization pass keeps the Gram matrix at machine precision
    q2, r2 = np.linalg.qr(q)
    return q2 * np.sign(np.diag(r2))
