import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcmcd import autodiff as ad
from pcmcd.geometry import (ROT90, DegenerateShapeError, GeometryError, ShapeParams,
                            canonical_order, dataset_angles, fill_factor, fill_factor_tensor,
                            mirror_c4, points_in_polygon, presence_chain, rasterize,
                            sample_dataset_shape, soft_tokens, soft_vertices)


def _sector_area(q1):
    """Triangle fan from the origin over the arc and on to the rotated first vertex."""
    pts = np.vstack([q1, q1[:1] @ ROT90])
    cross = pts[:-1, 0] * pts[1:, 1] - pts[:-1, 1] * pts[1:, 0]
    return 0.5 * cross.sum()


def test_presence_examples():
    np.testing.assert_allclose(presence_chain([0.0, 0.0, 0.0]), [1, 0.5, 0.25, 0.125], rtol=1e-15)
    np.testing.assert_allclose(presence_chain([20.0, 20.0, 20.0]), 1.0, atol=1e-8)
    s = 1.0 / (1.0 + np.exp(20.0))
    np.testing.assert_allclose(presence_chain([-20.0, 0.0, 0.0]), [1, s, s / 2, s / 4], rtol=1e-12)
    np.testing.assert_allclose(presence_chain([-20.0, 0.0, 0.0])[1:], [2.06e-9, 1.03e-9, 5.2e-10], rtol=1e-2)  # quoted to 2-3 figures


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-30, 30), min_size=3, max_size=3))
def test_presence_chain_is_monotone_product(logits):
    p = presence_chain(logits)
    sig = 1.0 / (1.0 + np.exp(-np.asarray(logits)))
    assert p[0] == 1.0
    np.testing.assert_allclose(p[1:], np.cumprod(sig), rtol=1e-12)
    assert np.all(np.diff(p) <= 0) and np.all(p > 0) and np.all(p <= 1)


def test_presence_tensor_matches_numpy():
    lg = np.array([0.3, -1.2, 2.0])
    np.testing.assert_allclose(presence_chain(ad.Tensor(lg)).data, presence_chain(lg), rtol=1e-15)


def test_single_vertex_square():
    mask = mirror_c4([[0.3, 0.3]])
    assert len(mask.vertices) == 4
    assert fill_factor(mask) == pytest.approx(4 * 0.09, abs=1e-15)


def test_axis_vertex_gives_half_cell():
    assert fill_factor(mirror_c4([[0.5, 0.0]])) == pytest.approx(0.5, abs=1e-15)


def test_quarter_square_corners_fill_cell():
    mask = mirror_c4([[0.5, 0.0], [0.5, 0.5], [0.0, 0.5]])
    assert fill_factor(mask) == pytest.approx(1.0, abs=1e-15)


def test_polygon_is_ccw_and_c4():
    shape = sample_dataset_shape(4, 4)
    v = shape.polygon().vertices
    x, y = v[:, 0], v[:, 1]
    assert np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y) > 0
    rotated = v @ ROT90
    for p in rotated:
        assert np.min(np.linalg.norm(v - p, axis=1)) < 1e-12


def test_degenerate_and_invalid_inputs():
    with pytest.raises(DegenerateShapeError):
        mirror_c4([[0.0, 0.0]])
    with pytest.raises(GeometryError):
        mirror_c4([[0.2, 0.3], [0.3, 0.1]])  # not sorted by angle
    with pytest.raises(GeometryError):
        mirror_c4(np.zeros((5, 2)) + 0.1)
    with pytest.raises(GeometryError):
        mirror_c4([[0.6, 0.1]])


def test_raster_rotation_invariance_many_shapes():
    rng = np.random.default_rng(0)
    for _ in range(100):
        shape = sample_dataset_shape(rng, int(rng.integers(1, 5)))
        r = shape.polygon().rasterize(64)
        assert np.array_equal(r, np.rot90(r))


def test_sector_area_identity():
    rng = np.random.default_rng(1)
    for _ in range(50):
        shape = sample_dataset_shape(rng, int(rng.integers(1, 5)))
        q1 = shape.q1_vertices()
        assert fill_factor(shape.polygon()) == pytest.approx(4 * _sector_area(q1), abs=1e-14)
        assert 0.0 <= fill_factor(shape.polygon()) <= 1.0


def test_points_in_polygon_unit_square():
    sq = np.array([[-0.5, -0.5], [0.5, -0.5], [0.5, 0.5], [-0.5, 0.5]])
    pts = np.array([[0.0, 0.0], [0.49, 0.49], [0.6, 0.0], [0.0, -0.7]])
    np.testing.assert_array_equal(points_in_polygon(pts, sq), [True, True, False, False])


def test_raster_area_converges():
    mask = mirror_c4([[0.4, 0.1], [0.2, 0.35]])
    assert rasterize(mask.vertices, 256).mean() == pytest.approx(fill_factor(mask), abs=5e-3)


def test_dataset_angles_and_determinism():
    assert dataset_angles(1)[0] == pytest.approx(np.pi / 4)
    np.testing.assert_allclose(dataset_angles(4), np.array([0.5, 1.5, 2.5, 3.5]) * np.pi / 8)
    a, b = sample_dataset_shape(9, 3), sample_dataset_shape(9, 3)
    assert a.to_json() == b.to_json()
    assert a.active.tolist() == [True, True, True, False]
    r = np.hypot(*a.vertices[:3].T)
    assert np.all((r >= 0.05) & (r <= 0.48))
    with pytest.raises(GeometryError):
        sample_dataset_shape(0, 5)


def test_shape_json_round_trip_and_export_keys():
    s = sample_dataset_shape(3, 2)
    d = json.loads(s.to_json())
    assert set(d) == {"logits", "vertices", "active"}
    assert len(d["vertices"]) == 4 and len(d["active"]) == 4
    back = ShapeParams.from_json(s.to_json())
    np.testing.assert_array_equal(back.logits, s.logits)
    np.testing.assert_array_equal(back.vertices, s.vertices)


def test_coordinates_clamped_to_quadrant():
    s = ShapeParams(np.zeros(3), [[-0.1, 0.2], [0.7, 0.1], [0.2, 0.2], [0.1, 0.1]])
    assert s.vertices.min() >= 0.0 and s.vertices.max() <= 0.5


def test_canonical_order_breaks_ties_by_radius():
    v = canonical_order([[0.4, 0.4], [0.1, 0.1], [0.3, 0.0]])
    np.testing.assert_allclose(v, [[0.3, 0.0], [0.1, 0.1], [0.4, 0.4]])


def test_tokens_zero_fill_absent():
    s = sample_dataset_shape(2, 2)
    tok = s.tokens()
    np.testing.assert_array_equal(tok[:, 0], [1, 1, 0, 0])
    np.testing.assert_array_equal(tok[2:, 1:], 0.0)


def test_fill_factor_gradient_wrt_radius():
    theta = dataset_angles(3)
    radius = ad.parameter(np.array([0.3, 0.25, 0.4]))
    dirs = ad.Tensor(np.column_stack([np.cos(theta), np.sin(theta)]))

    def fn():
        q1 = ad.mul(ad.reshape(radius, (3, 1)), dirs)
        return fill_factor_tensor(q1)

    q1 = radius.data[:, None] * dirs.data
    assert fn().item() == pytest.approx(fill_factor(mirror_c4(q1)), abs=1e-14)
    assert ad.grad_check(fn, [radius]) < 1e-4


def test_soft_vertices_hard_limits():
    verts = np.array([[0.3, 0.1], [0.25, 0.25], [0.1, 0.3], [0.05, 0.05]])
    p, v = soft_vertices(ad.Tensor([20.0, 20.0, -40.0]), ad.Tensor(verts))
    np.testing.assert_allclose(v.data[:3], verts[:3], atol=1e-7)
    # absent vertex sits on the chord to the rotated first vertex
    mid = 0.5 * (verts[2] + verts[0] @ ROT90)
    np.testing.assert_allclose(v.data[3], mid, atol=1e-7)
    tok = soft_tokens(ad.Tensor(np.zeros((2, 3))), ad.Tensor(np.stack([verts, verts])))
    assert tok.shape == (2, 4, 3)
