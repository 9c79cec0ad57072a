import numpy as np
import pytest

from morphfit.errors import DimensionError, ModelFormatError, ParameterError
from morphfit.io import (
    load_chart,
    mask_path,
    read_image,
    read_landmarks,
    read_mapping,
    read_texture,
    save_chart,
    write_image,
    write_landmarks,
    write_mapping,
    write_texture,
)
from morphfit.landmarks import LandmarkSet
from morphfit.texture import IsomapChart, TextureMap


def test_landmarks_round_trip(tmp_path, rng):
    ls = LandmarkSet([f"p{i}" for i in range(10)], rng.uniform(-5, 500, (10, 2)))
    write_landmarks(tmp_path / "a.txt", zip(ls.names, ls.points))
    back = read_landmarks(tmp_path / "a.txt")
    assert back.names == ls.names and np.array_equal(back.points, ls.points)


def test_landmarks_comments_and_errors(tmp_path):
    p = tmp_path / "a.txt"
    p.write_text("# header\n\nnose 1 2\n  eye 3.5 4e1 \n")
    ls = read_landmarks(p)
    assert ls.names == ("nose", "eye") and np.array_equal(ls.points, [[1, 2], [3.5, 40]])
    p.write_text("nose 1 2 3\n")
    with pytest.raises(DimensionError, match=":1:"):
        read_landmarks(p)
    p.write_text("nose 1 x\n")
    with pytest.raises(DimensionError):
        read_landmarks(p)


def test_mapping_round_trip_and_duplicates(tmp_path):
    write_mapping(tmp_path / "m.txt", {"a": 3, "b": 17})
    assert read_mapping(tmp_path / "m.txt") == {"a": 3, "b": 17}
    (tmp_path / "m.txt").write_text("a 3\na 4\n")
    with pytest.raises(ParameterError):
        read_mapping(tmp_path / "m.txt")
    (tmp_path / "m.txt").write_text("a 3.5\n")
    with pytest.raises(DimensionError):
        read_mapping(tmp_path / "m.txt")


@pytest.mark.parametrize("ext", [".png", ".ppm"])
def test_image_round_trip(tmp_path, rng, ext):
    img = rng.integers(0, 256, (13, 17, 3), dtype=np.uint8)
    write_image(tmp_path / f"x{ext}", img)
    assert np.array_equal(read_image(tmp_path / f"x{ext}"), img)


def test_image_errors(tmp_path):
    with pytest.raises(ParameterError):
        write_image(tmp_path / "x.gif", np.zeros((2, 2, 3), np.uint8))
    with pytest.raises(DimensionError):
        write_image(tmp_path / "x.png", np.zeros((2, 2, 3)))
    (tmp_path / "bad.png").write_bytes(b"not an image")
    with pytest.raises(ModelFormatError):
        read_image(tmp_path / "bad.png")


def test_texture_round_trip(tmp_path, rng):
    img = rng.integers(0, 256, (32, 32, 3), dtype=np.uint8)
    mask = rng.random((32, 32)) > 0.5
    path = tmp_path / "face.isomap.png"
    tex = TextureMap(img, mask)  # unmasked texels are zeroed on construction
    write_texture(path, tex)
    assert mask_path(path).endswith("face.isomap.mask.png")
    back = read_texture(path)
    assert np.array_equal(back.image, tex.image) and np.array_equal(back.mask, mask)


def test_chart_cache(tmp_path, rng):
    chart = IsomapChart(rng.random((50, 2)), "abc123")
    save_chart(tmp_path / "c.npz", chart)
    back = load_chart(tmp_path / "c.npz")
    assert np.array_equal(back.uv, chart.uv) and back.fingerprint == "abc123"
    (tmp_path / "c.npz").write_bytes(b"junk")
    with pytest.raises(ModelFormatError):
        load_chart(tmp_path / "c.npz")
