import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from uwbcal.geometry import (
    AnchorConstellation,
    FeatureVector,
    GeometryError,
    Mode,
    TagState,
    azimuth_elevation,
    azimuth_elevation_batch,
    feature_batch,
    relative_position,
    tdoa_feature,
    twr_feature,
    wrap_angle,
)

finite = st.floats(-50, 50, allow_nan=False)
vec3 = st.tuples(finite, finite, finite).map(np.array)
angles = st.tuples(*[st.floats(-10, 10, allow_nan=False)] * 3).map(np.array)
nonzero = vec3.filter(lambda v: np.linalg.norm(v) > 1e-6)


@pytest.mark.parametrize("tag, anchor, expected", [
    ((0, 0, 0), (4, 0, 0), (4, 0, 0)),
    ((4, 0, 0), (4, 0, 0), (0, 0, 0)),
    ((1, 2, 3), (0, 0, 0), (-1, -2, -3)),
])
def test_relative_position_examples(tag, anchor, expected):
    np.testing.assert_array_equal(relative_position(TagState(tag), anchor), expected)


@given(vec3, vec3)
def test_relative_position_roundtrip(p, a):
    tag = TagState(p)
    np.testing.assert_allclose(relative_position(tag, a) + tag.position, a, rtol=0, atol=1e-12)


def test_azimuth_elevation_boresight_and_vertical():
    assert azimuth_elevation((1, 0, 0), (0, 0, 0)) == (0.0, 0.0)
    alpha, beta = azimuth_elevation((0, 0, 1), (0, 0, 0))
    assert alpha == 0.0 and beta == pytest.approx(np.pi / 2)


def _rotation_oracle(d, yaw):
    """Bearing in the yaw frame via an explicit 2-D rotation matrix."""
    c, s = np.cos(-yaw), np.sin(-yaw)
    bx, by = c * d[0] - s * d[1], s * d[0] + c * d[1]
    return np.arctan2(by, bx)


def test_azimuth_yaw_rotation_example():
    alpha, beta = azimuth_elevation((1, 0, 0), (0, 0, np.pi / 2))
    assert alpha == pytest.approx(-np.pi / 2, abs=1e-15)
    assert alpha == pytest.approx(_rotation_oracle((1, 0, 0), np.pi / 2), abs=1e-15)
    assert beta == 0.0


@given(nonzero.filter(lambda v: np.hypot(v[0], v[1]) > 1e-6), st.floats(-np.pi, np.pi))
def test_azimuth_matches_rotation_oracle(d, yaw):
    alpha, _ = azimuth_elevation(d, (0.0, 0.0, yaw))
    expected = _rotation_oracle(d, yaw)
    assert abs(wrap_angle(alpha - expected)) < 1e-9


@given(nonzero, angles, st.floats(1e-3, 1e3))
def test_azimuth_elevation_scale_invariant(d, att, k):
    a1, b1 = azimuth_elevation(d, att)
    a2, b2 = azimuth_elevation(k * d, att)
    assert abs(a1 - a2) <= 1e-12 and abs(b1 - b2) <= 1e-12


@given(nonzero, angles)
def test_azimuth_elevation_ranges(d, att):
    alpha, beta = azimuth_elevation(d, att)
    assert -np.pi < alpha <= np.pi
    assert -np.pi / 2 <= beta <= np.pi / 2


def test_azimuth_zero_vector_raises():
    with pytest.raises(GeometryError):
        azimuth_elevation((0, 0, 0), (0, 0, 0))
    with pytest.raises(GeometryError):
        azimuth_elevation_batch(np.zeros((2, 3)), np.zeros(2))


def test_azimuth_batch_matches_scalar(rng):
    d = rng.normal(size=(50, 3))
    d[0] = (0, 0, 2.0)
    yaw = rng.uniform(-np.pi, np.pi, 50)
    a, b = azimuth_elevation_batch(d, yaw)
    for k in range(50):
        ak, bk = azimuth_elevation(d[k], (0, 0, yaw[k]))
        assert a[k] == pytest.approx(ak, abs=1e-12) and b[k] == pytest.approx(bk, abs=1e-12)


@pytest.mark.parametrize("pos, att, anchor, expected", [
    ((0, 0, 0), (0, 0, 0), (4, 0, 0), [4, 0, 0, 0, 0, 0]),
    ((1, 1, 1), (0.1, 0.2, 0.3), (1, 1, 1), [0, 0, 0, 0.1, 0.2, 0.3]),
    ((0, 0, 0), (0, 0, np.pi), (2, -2, 1), [2, -2, 1, 0, 0, np.pi]),
])
def test_twr_feature_examples(pos, att, anchor, expected):
    f = twr_feature(TagState(pos, attitude=att), anchor)
    assert f.mode is Mode.TWR
    np.testing.assert_allclose(f.values, expected, atol=1e-15)


def test_tdoa_feature_examples():
    f = tdoa_feature(TagState((0, 0, 0)), (4, 0, 0), (-4, 0, 0))
    np.testing.assert_array_equal(f.values, [4, 0, 0, -4, 0, 0, 0, 0, 0])
    f = tdoa_feature(TagState((1, 0, 0)), (1, 0, 0), (0, 0, 0))
    np.testing.assert_array_equal(f.values, [0, 0, 0, -1, 0, 0, 0, 0, 0])
    f = tdoa_feature(TagState((0.3, 1, 2)), (5, 5, 5), (5, 5, 5))
    np.testing.assert_array_equal(f.values[:3], f.values[3:6])


@given(vec3, angles, vec3, vec3)
def test_features_pure_and_sized(p, att, a, b):
    tag = TagState(p, attitude=att)
    f1, f2 = twr_feature(tag, a), twr_feature(tag, a)
    assert f1.values.shape == (6,) and f1.values.tobytes() == f2.values.tobytes()
    g1, g2 = tdoa_feature(tag, a, b), tdoa_feature(tag, a, b)
    assert g1.values.shape == (9,) and g1.values.tobytes() == g2.values.tobytes()


def test_feature_batch_matches_single(rng):
    pos = rng.uniform(0, 3, (20, 3))
    att = rng.uniform(-4, 4, (20, 3))
    ai, aj = rng.uniform(0, 3, (20, 3)), rng.uniform(0, 3, (20, 3))
    X = feature_batch(Mode.TDOA, pos, att, ai, aj)
    for k in range(20):
        f = tdoa_feature(TagState(pos[k], attitude=att[k]), ai[k], aj[k])
        np.testing.assert_allclose(X[k], f.values, atol=1e-12)


@given(st.floats(-1e3, 1e3))
def test_wrap_angle_range(a):
    w = float(wrap_angle(a))
    assert -np.pi < w <= np.pi
    assert abs(np.sin(w) - np.sin(a)) < 1e-9 and abs(np.cos(w) - np.cos(a)) < 1e-9


def test_wrap_angle_pi_maps_to_pi():
    assert wrap_angle(np.pi) == pytest.approx(np.pi)
    assert wrap_angle(-np.pi) == pytest.approx(np.pi)


def test_tag_state_validation():
    with pytest.raises(ValueError):
        TagState((0, 0, np.nan))
    with pytest.raises(ValueError):
        TagState((0, 0))
    assert TagState((0, 0, 0), attitude=(0, 0, 3 * np.pi)).attitude[2] == pytest.approx(np.pi)


def test_feature_vector_validation():
    with pytest.raises(ValueError):
        FeatureVector(np.zeros(7), Mode.TWR)
    with pytest.raises(ValueError):
        FeatureVector(np.full(6, np.inf), Mode.TWR)
    with pytest.raises(ValueError):
        Mode.parse("uwb")


def test_constellation_validation():
    with pytest.raises(ValueError, match="unique"):
        AnchorConstellation([0, 0], [[0, 0, 0], [1, 0, 0]], [[0, 0, 0], [1, 1, 1]])
    with pytest.raises(ValueError, match="1 cm"):
        AnchorConstellation([0, 1], [[0, 0, 0], [0.005, 0, 0]], [[0, 0, 0], [1, 1, 1]])
    with pytest.raises(ValueError):
        AnchorConstellation([0], [[0, 0, 0]], [[0, 0, 0], [1, 1, 1]])
    with pytest.raises(KeyError):
        AnchorConstellation.cuboid().position(42)


def test_cuboid_uses_every_vertex():
    c = AnchorConstellation.cuboid((7, 8, 3))
    assert len(c) == 8
    corners = {tuple(p) for p in c.positions}
    assert corners == {(x, y, z) for x in (0.0, 7.0) for y in (0.0, 8.0) for z in (0.0, 3.0)}
    assert c.max_range == pytest.approx(np.sqrt(49 + 64 + 9))


def test_constellation_json_roundtrip(tmp_path):
    c = AnchorConstellation.cuboid()
    path = tmp_path / "anchors.json"
    c.save(path)
    doc = json.loads(path.read_text())
    assert set(doc) == {"anchors", "bounds"} and doc["anchors"][0] == {"id": 0, "pos": [0.0, 0.0, 0.0]}
    back = AnchorConstellation.load(path)
    np.testing.assert_array_equal(back.positions, c.positions)
    np.testing.assert_array_equal(back.ids, c.ids)
    with pytest.raises(ValueError, match="malformed"):
        AnchorConstellation.from_dict({"anchors": [{"id": 0}]})
