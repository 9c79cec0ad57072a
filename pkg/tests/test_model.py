import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from morphfit.errors import (
    DimensionError,
    LandmarkMappingError,
    ModelFormatError,
    ParameterError,
)
from morphfit.model import (
    LANDMARK_SETS,
    LANDMARKS_49,
    MorphableModel,
    generate_synthetic_model,
    instantiate,
    load_model,
    mesh_components,
    save_model,
)


def test_zero_alpha_gives_mean_exactly(small_model):
    mesh = instantiate(small_model, np.zeros(small_model.num_coeffs))
    assert np.array_equal(mesh.vertices, small_model.mean_shape)
    assert np.array_equal(instantiate(small_model, []).vertices, small_model.mean_shape)


def test_unit_coefficient_adds_scaled_column(small_model):
    alpha = np.zeros(20)
    alpha[0] = 2.0
    got = instantiate(small_model, alpha).vertices
    want = small_model.mean_shape + 2 * small_model.shape_stddevs[0] * small_model.shape_basis[:, 0]
    assert np.allclose(got, want, rtol=0, atol=1e-12)


def test_instantiate_matches_loop_oracle(small_model, rng):
    alpha = rng.normal(size=20)
    # explicit per-entry sum, independent of the matrix product used by the library
    want = np.array(small_model.mean_shape, dtype=np.float64)
    B, s = small_model.shape_basis, small_model.shape_stddevs
    for i in range(B.shape[0]):
        acc = 0.0
        for k in range(20):
            acc += alpha[k] * s[k] * B[i, k]
        want[i] += acc
    assert np.max(np.abs(instantiate(small_model, alpha).vertices - want)) < 1e-12


def test_too_many_coefficients(small_model):
    with pytest.raises(DimensionError):
        instantiate(small_model, np.zeros(21))


def test_colour_requires_colour_model(small_model):
    with pytest.raises(ParameterError):
        instantiate(small_model, np.zeros(3), beta=np.zeros(2))


def test_colour_instantiation():
    m = generate_synthetic_model(3, 200, 5, colour=True)
    beta = np.array([1.0, -0.5])
    mesh = instantiate(m, np.zeros(5), beta)
    want = m.colour_mean + m.colour_basis[:, :2] @ (beta * m.colour_stddevs[:2])
    assert np.allclose(mesh.colours, want, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, 20, elements=st.floats(-3, 3)), arrays(np.float64, 20, elements=st.floats(-3, 3)))
def test_instantiate_is_linear(a, b):
    m = _cached_model()
    mean = m.mean_shape
    lhs = instantiate(m, a + b).vertices - mean
    rhs = (instantiate(m, a).vertices - mean) + (instantiate(m, b).vertices - mean)
    assert np.max(np.abs(lhs - rhs)) <= 1e-10


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, 20, elements=st.floats(-3, 3)))
def test_parseval(alpha):
    m = _cached_model()
    d = instantiate(m, alpha).vertices - m.mean_shape
    want = np.sum((alpha * m.shape_stddevs) ** 2)
    assert abs(d @ d - want) <= 1e-9 * max(want, 1e-300) + 1e-18


_MODEL = {}


def _cached_model():
    if "m" not in _MODEL:
        _MODEL["m"] = generate_synthetic_model(7, 500, 20)
    return _MODEL["m"]


def test_generator_deterministic_and_valid(small_model):
    again = generate_synthetic_model(7, 500, 20)
    for name in ("mean_shape", "shape_basis", "shape_stddevs", "triangles"):
        assert np.array_equal(getattr(small_model, name), getattr(again, name))
    assert small_model.landmark_map == again.landmark_map
    other = generate_synthetic_model(8, 500, 20)
    assert not np.array_equal(other.shape_basis, small_model.shape_basis)
    B = small_model.shape_basis
    assert np.abs(B.T @ B - np.eye(20)).max() < 1e-8
    assert np.all(small_model.shape_stddevs > 0)
    assert np.all(np.diff(small_model.shape_stddevs) <= 0)
    assert small_model.vertex_count == 500
    assert mesh_components(small_model.triangles, 500) == 1


def test_generator_has_all_landmark_sets(small_model):
    assert len(LANDMARKS_49) == 49
    for names in LANDMARK_SETS.values():
        v = small_model.landmark_vertices(names)
        assert len(set(v.tolist())) == len(names)


def test_generator_preconditions():
    with pytest.raises(ParameterError):
        generate_synthetic_model(0, 49, 5)
    with pytest.raises(ParameterError):
        generate_synthetic_model(0, 100, 100)


def test_unknown_landmark(small_model):
    with pytest.raises(LandmarkMappingError):
        small_model.landmark_vertices(["nose-tip-that-does-not-exist"])


def test_model_invariants_enforced(small_model):
    m = small_model
    with pytest.raises(ParameterError):
        MorphableModel(m.mean_shape, m.shape_basis * 1.01, m.shape_stddevs, m.triangles)
    with pytest.raises(ParameterError):
        MorphableModel(m.mean_shape, m.shape_basis, m.shape_stddevs[::-1], m.triangles)
    bad = np.array(m.triangles)
    bad[0, 0] = m.vertex_count
    with pytest.raises(DimensionError):
        MorphableModel(m.mean_shape, m.shape_basis, m.shape_stddevs, bad)
    with pytest.raises(DimensionError):
        MorphableModel(m.mean_shape, m.shape_basis, m.shape_stddevs, m.triangles, {"x": 10_000})
    # two disjoint triangles: disconnected
    pts = np.zeros(18)
    with pytest.raises(DimensionError):
        MorphableModel(pts, np.zeros((18, 0)), np.zeros(0), [[0, 1, 2], [3, 4, 5]])


def test_model_is_read_only(small_model):
    with pytest.raises(ValueError):
        small_model.mean_shape[0] = 1.0


def test_round_trip_bit_exact(small_model, tmp_path):
    path = tmp_path / "m.mfm"
    save_model(small_model, path)
    back = load_model(path)
    for name in ("mean_shape", "shape_basis", "shape_stddevs", "triangles"):
        a, b = getattr(small_model, name), getattr(back, name)
        assert a.dtype == b.dtype and a.tobytes() == b.tobytes()
    assert back.landmark_map == small_model.landmark_map
    assert back.fingerprint == small_model.fingerprint


def test_round_trip_with_colour(tmp_path):
    m = generate_synthetic_model(2, 120, 4, colour=True)
    save_model(m, tmp_path / "c.mfm")
    back = load_model(tmp_path / "c.mfm")
    assert back.colour_basis.tobytes() == m.colour_basis.tobytes()
    assert back.colour_stddevs.tobytes() == m.colour_stddevs.tobytes()


def test_triangle_index_out_of_range(small_model, tmp_path):
    path = tmp_path / "m.mfm"
    save_model(small_model, path)
    blob = bytearray(path.read_bytes())
    # triangles are the final int64 array
    blob[-8:] = np.array([small_model.vertex_count], dtype="<i8").tobytes()
    path.write_bytes(bytes(blob))
    with pytest.raises(ModelFormatError, match="triangle index out of range") as exc:
        load_model(path)
    assert exc.value.field == "triangles"


def test_truncated_file(small_model, tmp_path):
    path = tmp_path / "m.mfm"
    save_model(small_model, path)
    blob = path.read_bytes()
    for cut in (len(blob) - 1, len(blob) // 2, 40):
        path.write_bytes(blob[:cut])
        with pytest.raises(ModelFormatError):
            load_model(path)


def test_version_and_nonfinite(small_model, tmp_path):
    path = tmp_path / "m.mfm"
    save_model(small_model, path)
    blob = path.read_bytes()
    path.write_bytes(blob.replace(b"version 1\n", b"version 9\n", 1))
    with pytest.raises(ModelFormatError) as exc:
        load_model(path)
    assert exc.value.field == "version"
    head = blob.index(b"end_header\n") + len(b"end_header\n")
    bad = bytearray(blob)
    bad[head:head + 8] = np.array([np.nan], dtype="<f8").tobytes()
    path.write_bytes(bytes(bad))
    with pytest.raises(ModelFormatError) as exc:
        load_model(path)
    assert exc.value.field == "mean_shape"


def test_loader_accepts_large_basis(tmp_path):
    # loader must handle the full-scale model dimensions (V=3448, K=168)
    m = generate_synthetic_model(0, 3448, 168)
    save_model(m, tmp_path / "big.mfm")
    back = load_model(tmp_path / "big.mfm")
    assert (back.vertex_count, back.num_coeffs) == (3448, 168)
