"""Synthetic face renderings used as training and test data.

A procedural face texture is painted in isomap space (eyes, brows, nose,
mouth at the landmark positions of the chart), so rendered images show
features exactly where the model's landmarks project.
"""

import numpy as np
from PIL import Image, ImageDraw

from .camera import camera_from_pose
from .model import LANDMARKS_49, instantiate
from .texture import TextureMap, render

SKIN = (196, 152, 128)


def vertex_normals(points, triangles):
    tri = points[triangles]
    fn = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    vn = np.zeros_like(points)
    for k in range(3):
        np.add.at(vn, triangles[:, k], fn)
    norm = np.linalg.norm(vn, axis=1, keepdims=True)
    return vn / np.where(norm > 0, norm, 1.0)


def face_texture(model, chart, resolution=256):
    """Procedural face albedo painted on the chart; every texel is valid."""
    uv = chart.uv
    res = resolution
    img = Image.new("RGB", (res, res), SKIN)
    draw = ImageDraw.Draw(img)

    def at(name):
        u, v = uv[model.landmark_map[name]]
        return (u * res - 0.5, v * res - 0.5)

    def poly(names):
        return [at(n) for n in names]

    lw = max(2, res // 64)
    for brow in (["18", "19", "20", "21", "22"], ["23", "24", "25", "26", "27"]):
        draw.line(poly(brow), fill=(70, 45, 35), width=lw * 2, joint="curve")
    for eye in (["37", "38", "39", "40", "41", "42"], ["43", "44", "45", "46", "47", "48"]):
        pts = poly(eye)
        draw.polygon(pts, fill=(235, 230, 225), outline=(40, 30, 30))
        cx = np.mean([p[0] for p in pts])
        cy = np.mean([p[1] for p in pts])
        r = 0.35 * (max(p[1] for p in pts) - min(p[1] for p in pts)) + 1
        draw.ellipse([cx - r, cy - r, cx + r, cy + r], fill=(60, 40, 30))
    draw.line(poly(["28", "29", "30", "31"]), fill=(170, 125, 105), width=lw)
    draw.line(poly(["32", "33", "34", "35", "36"]), fill=(120, 80, 70), width=lw)
    for n in ("32", "36"):
        x, y = at(n)
        r = lw * 1.5
        draw.ellipse([x - r, y - r, x + r, y + r], fill=(80, 50, 45))
    outer = [str(i) for i in range(49, 61)]
    draw.polygon(poly(outer), fill=(170, 70, 75), outline=(110, 40, 45))
    draw.polygon(poly(["49", "62", "63", "64", "55", "66", "67", "68"]), fill=(90, 30, 35))
    arr = np.asarray(img, dtype=np.float64)
    # gentle low-frequency skin variation
    yy, xx = np.mgrid[0:res, 0:res] / res
    arr *= (0.92 + 0.08 * np.cos(3.0 * xx) * np.cos(2.0 * yy))[..., None]
    return TextureMap(np.clip(arr, 0, 255).astype(np.uint8), np.ones((res, res), dtype=bool))


def checkerboard_texture(resolution=256, squares=8, low=40, high=220):
    idx = (np.arange(resolution) * squares) // resolution
    board = (idx[:, None] + idx[None, :]) % 2
    img = np.where(board[..., None] == 1, high, low).astype(np.uint8).repeat(3, axis=2)
    return TextureMap(img, np.ones((resolution, resolution), dtype=bool))


def lambert_shade(points, triangles, camera, ambient=0.45, light=(0.3, 0.4, 1.0)):
    """Per-vertex shading for a light fixed relative to the camera."""
    normals = vertex_normals(points, triangles)
    view = camera.view_direction()
    # express the light in model space: along the view direction, tilted by image axes
    right = camera.linear[0] / np.linalg.norm(camera.linear[0])
    up = -camera.linear[1] / np.linalg.norm(camera.linear[1])
    ldir = light[0] * right + light[1] * up + light[2] * view
    ldir /= np.linalg.norm(ldir)
    return ambient + (1 - ambient) * np.clip(normals @ ldir, 0.0, 1.0)


def render_face(model, alpha, camera, chart, texture, width, height, background=None, shade=True):
    mesh = instantiate(model, alpha)
    vs = lambert_shade(mesh.points, mesh.triangles, camera) if shade else None
    img = render(mesh, camera, chart, texture, width, height, vertex_shade=vs)
    if background is not None:
        bg = np.asarray(background, dtype=np.uint8)
        empty = ~np.any(img > 0, axis=2)
        img[empty] = bg[empty]
    return img


def smooth_background(rng, width, height):
    coarse = rng.uniform(30, 200, size=(4, 4, 3))
    small = Image.fromarray(coarse.astype(np.uint8))
    big = small.resize((width, height), Image.BILINEAR)
    noise = rng.normal(0, 6, size=(height, width, 3))
    return np.clip(np.asarray(big, dtype=np.float64) + noise, 0, 255).astype(np.uint8)


def face_box(points, pad=0.15):
    """Square box around landmark points, enlarged by ``pad`` on each side: (x, y, w, h)."""
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    c = (lo + hi) / 2
    side = (hi - lo).max() * (1 + 2 * pad)
    return (float(c[0] - side / 2), float(c[1] - side / 2), float(side), float(side))


def random_sample(model, chart, texture, rng, size=192, face_px=(110.0, 140.0), yaw=(-30.0, 30.0),
                  pitch=(-12.0, 12.0), roll=(-12.0, 12.0), alpha_scale=0.5, names=LANDMARKS_49):
    """One random rendering with its ground truth.

    Returns a dict with ``image``, ``names``, ``points`` (projected landmark
    positions), ``box``, ``alpha`` and ``camera``.
    """
    k = min(model.num_coeffs, 20)
    alpha = np.clip(rng.normal(0, alpha_scale, size=k), -2.5, 2.5)
    angles = (rng.uniform(*yaw), rng.uniform(*pitch), rng.uniform(*roll))
    # landmarks span ~96 model units across; choose the scale from the target face size
    scale = rng.uniform(*face_px) / 96.0
    centre = size / 2 + rng.uniform(-0.06, 0.06, size=2) * size
    cam0 = camera_from_pose(*angles, scale=scale)
    mesh = instantiate(model, alpha)
    v = model.landmark_vertices(names)
    pts0 = cam0.project(mesh.points[v])
    shift = centre - (pts0.min(axis=0) + pts0.max(axis=0)) / 2
    camera = camera_from_pose(*angles, scale=scale, tx=shift[0], ty=shift[1])
    image = render_face(model, alpha, camera, chart, texture, size, size,
                        background=smooth_background(rng, size, size))
    points = camera.project(mesh.points[v])
    return {
        "image": image,
        "names": list(names),
        "points": points,
        "box": face_box(points),
        "alpha": alpha,
        "camera": camera,
        "angles": angles,
    }
