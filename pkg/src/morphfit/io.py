"""Plain-file formats: landmark lists, landmark mappings, images, texture maps
and cached isomap charts. All writers replace their target atomically."""

import io
import os

import numpy as np
from PIL import Image

from ._container import write_atomic
from .errors import DimensionError, ModelFormatError, ParameterError
from .landmarks import LandmarkSet
from .texture import IsomapChart, TextureMap


def _records(path, what):
    """Yield ``(line_number, fields)`` for non-blank, non-comment lines."""
    with open(path, encoding="utf-8") as fh:
        for no, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split()
            if len(fields) < 2:
                raise DimensionError(f"{path}:{no}: malformed {what} record {line!r}")
            yield no, fields


def read_landmarks(path):
    """``name x y`` per line (pixels, origin top-left, y down)."""
    names, pts = [], []
    for no, f in _records(path, "landmark"):
        if len(f) != 3:
            raise DimensionError(f"{path}:{no}: expected 'name x y', got {' '.join(f)!r}")
        try:
            pts.append((float(f[1]), float(f[2])))
        except ValueError:
            raise DimensionError(f"{path}:{no}: non-numeric coordinate") from None
        names.append(f[0])
    return LandmarkSet(names, np.asarray(pts).reshape(-1, 2))


def format_landmarks(landmarks):
    return "".join(f"{n} {x!r} {y!r}\n" for n, (x, y) in ((n, map(float, p)) for n, p in landmarks))


def write_landmarks(path, landmarks):
    write_atomic(path, format_landmarks(landmarks).encode())


def read_mapping(path):
    """``name vertex_index`` per line -> dict."""
    out = {}
    for no, f in _records(path, "mapping"):
        if len(f) != 2 or not f[1].lstrip("-").isdigit():
            raise DimensionError(f"{path}:{no}: expected 'name vertex_index'")
        if f[0] in out:
            raise ParameterError(f"{path}:{no}: duplicate landmark name {f[0]!r}")
        out[f[0]] = int(f[1])
    return out


def write_mapping(path, mapping):
    write_atomic(path, "".join(f"{n} {int(i)}\n" for n, i in mapping.items()).encode())


# --------------------------------------------------------------------------
# images


def _format_for(path):
    ext = os.path.splitext(os.fspath(path))[1].lower()
    if ext == ".png":
        return "PNG"
    if ext in (".ppm", ".pnm"):
        return "PPM"
    if ext == ".pgm":
        return "PPM"
    raise ParameterError(f"unsupported image extension {ext!r} (use .png or .ppm)")


def read_image(path):
    """Any image Pillow understands, as an (H, W, 3) uint8 array."""
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"))
    except OSError as exc:
        raise ModelFormatError("image", f"{path}: {exc}") from exc


def write_image(path, image):
    arr = np.asarray(image)
    if arr.dtype != np.uint8:
        raise DimensionError("images are written from uint8 arrays")
    if arr.ndim not in (2, 3):
        raise DimensionError("image must be (H, W) or (H, W, 3)")
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format=_format_for(path))
    write_atomic(path, buf.getvalue())


def mask_path(path):
    """``face.isomap.png`` -> ``face.isomap.mask.png``."""
    root, ext = os.path.splitext(os.fspath(path))
    return root + ".mask" + ext


def write_texture(path, texture):
    """Texture image plus its single-channel mask (255 = filled) next to it."""
    write_image(path, texture.image)
    write_image(mask_path(path), np.where(texture.mask, 255, 0).astype(np.uint8))


def read_texture(path):
    img = read_image(path)
    mpath = mask_path(path)
    if os.path.exists(mpath):
        with Image.open(mpath) as im:
            mask = np.asarray(im.convert("L")) > 127
    else:
        mask = np.ones(img.shape[:2], dtype=bool)
    return TextureMap(img, mask)


# --------------------------------------------------------------------------
# chart cache


def save_chart(path, chart):
    buf = io.BytesIO()
    np.savez(buf, uv=chart.uv, fingerprint=np.array(chart.fingerprint))
    write_atomic(path, buf.getvalue())


def load_chart(path):
    try:
        with np.load(path, allow_pickle=False) as z:
            return IsomapChart(np.array(z["uv"]), str(z["fingerprint"]))
    except (OSError, KeyError, ValueError) as exc:
        raise ModelFormatError("chart", f"{path}: {exc}") from exc
