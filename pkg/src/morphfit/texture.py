"""Isomap texture chart, software rasterizer, pose-invariant texture remapping
and frontal rendering.

Raster conventions: pixel ``(row, col)`` has its centre at image coordinates
``(x=col, y=row)``; coverage uses a half-open tie rule so triangles sharing an
edge never both claim a pixel. Texel ``(row, col)`` of an ``R x R`` texture
has its centre at ``u = (col + 0.5) / R``, ``v = (row + 0.5) / R``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.sparse import coo_matrix, csr_matrix, identity
from scipy.sparse.csgraph import connected_components, shortest_path
from scipy.sparse.linalg import eigsh

from .camera import AffineCamera
from .errors import ChartMismatchError, ConnectivityError, DimensionError, ParameterError

DEFAULT_RESOLUTION = 512
DEFAULT_RINGS = 4
DEPTH_EPS = 1e-4


# --------------------------------------------------------------------------
# isomap chart


@dataclass(frozen=True, eq=False)
class IsomapChart:
    uv: np.ndarray
    fingerprint: str
    _coverage: dict = field(default_factory=dict, repr=False)

    def coverage(self, triangles, resolution):
        """Triangle id and barycentrics for every texel centre (cached)."""
        key = int(resolution)
        if key not in self._coverage:
            xy = self.uv * resolution - 0.5
            tri_id, bary, _ = rasterize(xy, np.zeros(len(xy)), triangles, resolution, resolution)
            self._coverage[key] = (tri_id, bary)
        return self._coverage[key]


def _adjacency(triangles, n):
    tri = np.asarray(triangles, dtype=np.int64)
    rows = np.concatenate([tri[:, 0], tri[:, 1], tri[:, 2], tri[:, 1], tri[:, 2], tri[:, 0]])
    cols = np.concatenate([tri[:, 1], tri[:, 2], tri[:, 0], tri[:, 0], tri[:, 1], tri[:, 2]])
    adj = coo_matrix((np.ones(rows.size, dtype=bool), (rows, cols)), shape=(n, n)).tocsr()
    adj.sum_duplicates()
    return adj


def neighbourhood_graph(points, triangles, rings=DEFAULT_RINGS):
    """Sparse graph linking each vertex to its ``rings``-ring, weighted by chord length."""
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    adj = _adjacency(triangles, n).astype(np.float64)
    reach = adj.copy()
    step = adj + identity(n, format="csr")
    for _ in range(rings - 1):
        reach = (reach @ step).tocsr()
    reach = reach.tocoo()
    mask = reach.row != reach.col
    r, c = reach.row[mask], reach.col[mask]
    w = np.linalg.norm(points[r] - points[c], axis=1)
    return csr_matrix((w, (r, c)), shape=(n, n))


def geodesic_distances(points, triangles, rings=DEFAULT_RINGS):
    """All-pairs shortest-path distances over the neighbourhood graph."""
    graph = neighbourhood_graph(points, triangles, rings)
    ncomp, _ = connected_components(graph, directed=False)
    if ncomp != 1:
        raise ConnectivityError(ncomp)
    return shortest_path(graph, method="D", directed=False)


def classical_mds(D, dim=2):
    """Classical (Torgerson) MDS of a distance matrix; eigenvalues descending."""
    D = np.asarray(D, dtype=np.float64)
    n = len(D)
    D2 = D ** 2
    row = D2.mean(axis=1)
    B = -0.5 * (D2 - row[:, None] - row[None, :] + row.mean())
    if n > 200:
        w, v = eigsh(B, k=dim, which="LA", v0=np.ones(n))
    else:
        w, v = linalg.eigh(B, subset_by_index=[n - dim, n - 1])
    order = np.argsort(w)[::-1]
    w, v = w[order], v[:, order]
    # deterministic sign: largest-magnitude entry of each eigenvector positive
    signs = np.sign(v[np.abs(v).argmax(axis=0), np.arange(dim)])
    v = v * signs
    return v * np.sqrt(np.maximum(w, 0.0))


def isomap_embedding(points, triangles, rings=DEFAULT_RINGS):
    """Raw 2D isomap of a mesh (model units, before normalization)."""
    return classical_mds(geodesic_distances(points, triangles, rings), 2)


def kruskal_stress(D, Y):
    """Kruskal stress-1 between target distances ``D`` and embedding ``Y``."""
    E = np.linalg.norm(Y[:, None, :] - Y[None, :, :], axis=2)
    iu = np.triu_indices(len(D), 1)
    return float(np.sqrt(np.sum((E[iu] - D[iu]) ** 2) / np.sum(D[iu] ** 2)))


def mean_relative_distortion(D, Y):
    E = np.linalg.norm(Y[:, None, :] - Y[None, :, :], axis=2)
    iu = np.triu_indices(len(D), 1)
    d = D[iu]
    keep = d > 0
    return float(np.mean(np.abs(E[iu][keep] - d[keep]) / d[keep]))


def _orient(Y, points):
    # u follows model +x, v follows model -y: the chart reads like a frontal view
    cx = [abs(np.corrcoef(Y[:, i], points[:, 0])[0, 1]) for i in range(2)]
    if cx[1] > cx[0]:
        Y = Y[:, ::-1]
    if np.corrcoef(Y[:, 0], points[:, 0])[0, 1] < 0:
        Y[:, 0] = -Y[:, 0]
    if np.corrcoef(Y[:, 1], points[:, 1])[0, 1] > 0:
        Y[:, 1] = -Y[:, 1]
    return Y


def normalize_chart(Y):
    """Fit 2D coordinates into the unit square, preserving aspect ratio."""
    lo = Y.min(axis=0)
    extent = Y.max(axis=0) - lo
    span = extent.max()
    uv = (Y - lo) / span
    uv += (1.0 - extent / span) / 2.0
    return np.clip(uv, 0.0, 1.0)


def compute_isomap(model, rings=DEFAULT_RINGS):
    """UV chart preserving geodesic distances on the model's mean shape."""
    pts = model.mean_points()
    Y = _orient(isomap_embedding(pts, model.triangles, rings).copy(), pts)
    uv = normalize_chart(Y)
    uv.flags.writeable = False
    return IsomapChart(uv, model.fingerprint)


# --------------------------------------------------------------------------
# rasterizer


def _edge(ax, ay, bx, by, px, py):
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax)


def _owns(dx, dy):
    # half-open tie rule: a pixel exactly on an edge belongs to the triangle
    # on whose left the edge runs downward (or rightward when horizontal)
    return (dy > 0) | ((dy == 0) & (dx > 0))


RASTER_CHUNK = 1 << 20


def rasterize(xy, depth, triangles, width, height):
    """Z-buffered coverage of 2D triangles.

    Returns ``(tri_id, bary, zbuf)``: per-pixel winning triangle index (-1 for
    background), barycentric weights with respect to the triangle's vertex
    order, and the interpolated depth (larger is closer). Pixel centres sit
    at integer coordinates; on equal depth the lower triangle index wins.
    """
    xy = np.asarray(xy, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    tris = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    tri_id = np.full(height * width, -1, dtype=np.int64)
    bary = np.zeros((height * width, 3))
    zbuf = np.full(height * width, -np.inf)
    if len(tris) == 0:
        return tri_id.reshape(height, width), bary.reshape(height, width, 3), zbuf.reshape(height, width)
    P = xy[tris]  # (T, 3, 2)
    Z = depth[tris]
    xmin = np.maximum(np.ceil(P[:, :, 0].min(axis=1)), 0).astype(np.int64)
    xmax = np.minimum(np.floor(P[:, :, 0].max(axis=1)), width - 1).astype(np.int64)
    ymin = np.maximum(np.ceil(P[:, :, 1].min(axis=1)), 0).astype(np.int64)
    ymax = np.minimum(np.floor(P[:, :, 1].max(axis=1)), height - 1).astype(np.int64)
    area = _edge(P[:, 0, 0], P[:, 0, 1], P[:, 1, 0], P[:, 1, 1], P[:, 2, 0], P[:, 2, 1])
    # counter-clockwise (in y-down pixels) vertex order so all edge functions are >= 0 inside
    order = np.where((area < 0)[:, None], [0, 2, 1], [0, 1, 2])
    Q = np.take_along_axis(P, order[:, :, None], axis=1)
    area = np.abs(area)
    live = np.nonzero((xmin <= xmax) & (ymin <= ymax) & (area > 0))[0]
    bw = xmax - xmin + 1
    counts = np.zeros(len(tris), dtype=np.int64)
    counts[live] = bw[live] * (ymax[live] - ymin[live] + 1)

    start = 0
    csum = np.cumsum(counts[live])
    while start < len(live):
        # chunks hold whole triangles in index order, so strict depth tests keep the lower index on ties
        base = csum[start - 1] if start else 0
        stop = max(int(np.searchsorted(csum, base + RASTER_CHUNK, side="right")), start + 1)
        ids = live[start:stop]
        start = stop
        t = np.repeat(ids, counts[ids])
        k = np.arange(len(t)) - np.repeat(np.cumsum(counts[ids]) - counts[ids], counts[ids])
        xs = (xmin[t] + k % bw[t]).astype(np.float64)
        ys = (ymin[t] + k // bw[t]).astype(np.float64)
        q = Q[t]
        x0, y0, x1, y1, x2, y2 = q[:, 0, 0], q[:, 0, 1], q[:, 1, 0], q[:, 1, 1], q[:, 2, 0], q[:, 2, 1]
        w0 = _edge(x1, y1, x2, y2, xs, ys)
        w1 = _edge(x2, y2, x0, y0, xs, ys)
        w2 = _edge(x0, y0, x1, y1, xs, ys)
        inside = (w0 > 0) | ((w0 == 0) & _owns(x2 - x1, y2 - y1))
        inside &= (w1 > 0) | ((w1 == 0) & _owns(x0 - x2, y0 - y2))
        inside &= (w2 > 0) | ((w2 == 0) & _owns(x1 - x0, y1 - y0))
        if not inside.any():
            continue
        t, xs, ys = t[inside], xs[inside], ys[inside]
        w = np.stack([w0[inside], w1[inside], w2[inside]], axis=1) / area[t, None]
        b = np.empty_like(w)
        np.put_along_axis(b, order[t], w, axis=1)
        zt = Z[t]
        z = b[:, 0] * zt[:, 0] + b[:, 1] * zt[:, 1] + b[:, 2] * zt[:, 2]
        pix = ys.astype(np.int64) * width + xs.astype(np.int64)
        # best candidate per pixel: largest depth, then lowest triangle index
        srt = np.lexsort((t, -z, pix))
        pix, z, t, b = pix[srt], z[srt], t[srt], b[srt]
        first = np.ones(len(pix), dtype=bool)
        first[1:] = pix[1:] != pix[:-1]
        pix, z, t, b = pix[first], z[first], t[first], b[first]
        win = z > zbuf[pix]
        pix = pix[win]
        zbuf[pix] = z[win]
        tri_id[pix] = t[win]
        bary[pix] = b[win]
    return tri_id.reshape(height, width), bary.reshape(height, width, 3), zbuf.reshape(height, width)


def bilinear_sample(image, x, y):
    """Sample an (H, W[, C]) array at float pixel coordinates with edge clamping."""
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape[:2]
    x = np.clip(np.asarray(x, dtype=np.float64), 0, w - 1)
    y = np.clip(np.asarray(y, dtype=np.float64), 0, h - 1)
    x0 = np.minimum(np.floor(x).astype(np.int64), w - 2 if w > 1 else 0)
    y0 = np.minimum(np.floor(y).astype(np.int64), h - 2 if h > 1 else 0)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    if img.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bottom = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return top * (1 - fy) + bottom * fy


def _to_uint8(values):
    return np.clip(np.rint(values), 0, 255).astype(np.uint8)


# --------------------------------------------------------------------------
# texture remapping


@dataclass(frozen=True, eq=False)
class TextureMap:
    """RGB isomap texture plus a validity mask (True = filled)."""

    image: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        img = np.asarray(self.image)
        mask = np.asarray(self.mask, dtype=bool)
        if img.ndim != 3 or img.shape[2] != 3 or img.shape[:2] != mask.shape:
            raise DimensionError("texture image must be (H, W, 3) with a matching (H, W) mask")
        img = img.astype(np.uint8, copy=True)
        img[~mask] = 0
        object.__setattr__(self, "image", img)
        object.__setattr__(self, "mask", mask.copy())

    @property
    def width(self):
        return self.image.shape[1]

    @property
    def height(self):
        return self.image.shape[0]

    def invisible_fraction(self, covered):
        """Fraction of ``covered`` texels (those inside the chart) that are unfilled."""
        covered = np.asarray(covered, dtype=bool)
        return float(np.count_nonzero(covered & ~self.mask) / np.count_nonzero(covered))


def _check_chart(mesh, chart):
    if mesh.model_fingerprint is not None and mesh.model_fingerprint != chart.fingerprint:
        raise ChartMismatchError("isomap chart was computed for a different model")
    if len(chart.uv) != mesh.vertex_count:
        raise ChartMismatchError(f"chart has {len(chart.uv)} vertices, mesh has {mesh.vertex_count}")


def _camera_depth(mesh, camera):
    view = camera.view_direction()
    pts = mesh.points
    depth = pts @ view
    tri = pts[mesh.triangles]
    normals = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    front = normals @ view > 0
    return depth, front


def _depth_slopes(xy, depth, tris):
    # |grad depth| in image space per triangle: how much depth changes over one pixel
    P = xy[tris]
    Z = depth[tris]
    e1 = P[:, 1] - P[:, 0]
    e2 = P[:, 2] - P[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    dz1 = Z[:, 1] - Z[:, 0]
    dz2 = Z[:, 2] - Z[:, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        gx = (dz1 * e2[:, 1] - dz2 * e1[:, 1]) / det
        gy = (dz2 * e1[:, 0] - dz1 * e2[:, 0]) / det
    g = np.hypot(gx, gy)
    g[~np.isfinite(g)] = np.inf
    return g


def remap_texture(image, mesh, camera, chart, resolution=DEFAULT_RESOLUTION):
    """Pull image colours onto the isomap chart of a fitted mesh.

    Texels whose surface point faces away from the camera, is hidden behind
    another part of the mesh, or projects outside the image stay black and
    are flagged invisible in the mask.
    """
    if resolution < 32:
        raise ParameterError(f"resolution must be >= 32, got {resolution}")
    _check_chart(mesh, chart)
    img = np.asarray(image)
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    h, w = img.shape[:2]
    tris = mesh.triangles
    pts = mesh.points
    tri_id, bary = chart.coverage(tris, resolution)
    covered = tri_id >= 0
    t = tri_id[covered]
    b = bary[covered]
    surface = np.einsum("nk,nkd->nd", b, pts[tris[t]])

    xy = camera.project(pts)
    depth, front = _camera_depth(mesh, camera)
    proj = camera.project(surface)
    zt = surface @ camera.view_direction()

    visible = front[t].copy()
    inside = (proj[:, 0] >= 0) & (proj[:, 0] <= w - 1) & (proj[:, 1] >= 0) & (proj[:, 1] <= h - 1)
    visible &= inside

    zid, _, zbuf = rasterize(xy, depth, tris[front], w, h)
    front_ids = np.nonzero(front)[0]
    zid = np.where(zid >= 0, front_ids[np.maximum(zid, 0)], -1)
    px = np.clip(np.rint(proj[:, 0]).astype(np.int64), 0, w - 1)
    py = np.clip(np.rint(proj[:, 1]).astype(np.int64), 0, h - 1)
    occ_id = zid[py, px]
    occ_z = zbuf[py, px]
    span = depth.max() - depth.min()
    slopes = _depth_slopes(xy, depth, tris)
    tol = DEPTH_EPS * span + slopes[t]
    hidden = (occ_id >= 0) & (occ_id != t) & (zt < occ_z - tol)
    visible &= ~hidden

    colours = np.zeros((len(t), 3))
    colours[visible] = bilinear_sample(img[..., :3], proj[visible, 0], proj[visible, 1])
    out = np.zeros((resolution, resolution, 3), dtype=np.uint8)
    mask = np.zeros((resolution, resolution), dtype=bool)
    out[covered] = _to_uint8(colours)
    mask[covered] = visible
    return TextureMap(out, mask)


# --------------------------------------------------------------------------
# rendering


def render(mesh, camera, chart, texture, width, height, vertex_shade=None):
    """Render a textured mesh under an affine camera; background black.

    ``vertex_shade`` optionally scales colours by an interpolated per-vertex factor.
    """
    _check_chart(mesh, chart)
    xy = camera.project(mesh.points)
    depth, front = _camera_depth(mesh, camera)
    tris = mesh.triangles[front]
    tri_id, bary, _ = rasterize(xy, depth, tris, width, height)
    out = np.zeros((height, width, 3), dtype=np.uint8)
    hit = tri_id >= 0
    if not hit.any():
        return out
    uv = np.einsum("nk,nkd->nd", bary[hit], chart.uv[tris[tri_id[hit]]])
    tex = texture.image
    tx = uv[:, 0] * tex.shape[1] - 0.5
    ty = uv[:, 1] * tex.shape[0] - 0.5
    colours = bilinear_sample(tex, tx, ty)
    if vertex_shade is not None:
        shade = np.einsum("nk,nk->n", bary[hit], np.asarray(vertex_shade)[tris[tri_id[hit]]])
        colours = colours * shade[:, None]
    out[hit] = _to_uint8(colours)
    return out


def frontal_camera(mesh, width, height, margin=0.1):
    """Canonical frontal camera fitting the mesh into the image with a margin."""
    pts = mesh.points
    lo = pts[:, :2].min(axis=0)
    hi = pts[:, :2].max(axis=0)
    extent = np.maximum(hi - lo, 1e-12)
    scale = min(width * (1 - 2 * margin) / extent[0], height * (1 - 2 * margin) / extent[1])
    cx, cy = (lo + hi) / 2
    tx = (width - 1) / 2 - scale * cx
    ty = (height - 1) / 2 + scale * cy
    return AffineCamera([[scale, 0, 0, tx], [0, -scale, 0, ty], [0, 0, 0, 1]])


def render_frontal(mesh, texture, chart, output_size=256):
    """Pose-normalized rendering of a textured mesh."""
    if np.isscalar(output_size):
        width = height = int(output_size)
    else:
        width, height = (int(v) for v in output_size)
    if width < 1 or height < 1:
        raise DimensionError("output size must be positive")
    return render(mesh, frontal_camera(mesh, width, height), chart, texture, width, height)
