import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ifop import _kernels_py, kernels
from ifop.geometry import (
    AxisSquare, Box, Ellipse, Geometry, GeometryError, LineX, Perturbation, PerturbationError,
    PlaneZ, Polyline, circle, perturb, project_to_curve, region_label, sdf_eval, star_curve,
)

C = circle((0.5, 0.5), 0.3)
UNIT = Geometry(Box.cube(0.0, 1.0), [C])


def test_region_label_examples():
    assert region_label(UNIT, (0.05, 0.05)) == 1
    assert region_label(UNIT, (0.5, 0.5)) == 2
    # canvas [-0.5, 1.5]^2 is larger than the domain
    assert region_label(UNIT, (-0.1, 0.5)) == 0


def test_sdf_examples():
    assert sdf_eval(C, (0.5, 0.5)) == pytest.approx(-0.3)
    assert sdf_eval(C, (0.9, 0.5)) == pytest.approx(0.1)
    assert sdf_eval(C, (0.8, 0.5)) == pytest.approx(0.0, abs=1e-15)


def test_project_examples():
    np.testing.assert_allclose(project_to_curve(C, (0.9, 0.5)), (0.8, 0.5))
    np.testing.assert_allclose(project_to_curve(PlaneZ(0.4), (0.2, 0.7, 0.9)), (0.2, 0.7, 0.4))
    np.testing.assert_allclose(project_to_curve(C, (0.5, 0.5)), (0.8, 0.5))


def test_box_sdf():
    box = Box.cube(0.0, 1.0)
    assert box.sdf((0.5, 0.5)) == pytest.approx(-0.5)
    assert box.sdf((1.5, 0.5)) == pytest.approx(0.5)
    assert box.sdf((2.0, 2.0)) == pytest.approx(np.sqrt(2))
    np.testing.assert_allclose(box.project((0.5, 0.9)), (0.5, 1.0))


def test_ellipse_matches_dense_polyline_oracle():
    e = Ellipse((0.5, 0.5), 0.3, 0.15)
    th = np.linspace(0, 2 * np.pi, 200001)
    dense = np.stack([0.5 + 0.3 * np.cos(th), 0.5 + 0.15 * np.sin(th)], axis=1)
    rng = np.random.default_rng(1)
    pts = rng.uniform(0, 1, size=(300, 2))
    oracle = np.array([np.min(np.linalg.norm(dense - p, axis=1)) for p in pts])
    np.testing.assert_allclose(np.abs(e.sdf(pts)), oracle, atol=1e-7)
    proj = e.project(pts)
    np.testing.assert_allclose(np.linalg.norm(proj - pts, axis=1), np.abs(e.sdf(pts)), atol=1e-12)
    # tall ellipse exercises the axis swap
    tall = Ellipse((0.0, 0.0), 0.1, 0.4)
    np.testing.assert_allclose(tall.sdf([(0.0, 0.0), (0.3, 0.0), (0.0, 0.5)]), [-0.1, 0.2, 0.1], atol=1e-12)


def test_star_curve_examples():
    sq = star_curve((1.0, 2.0), [0.5] * 4)
    np.testing.assert_allclose(sq.vertices, [[1.5, 2.0], [1.0, 2.5], [0.5, 2.0], [1.0, 1.5]], atol=1e-15)
    s = star_curve((0.0, 0.0), [0.3] * 100)
    np.testing.assert_allclose(np.linalg.norm(s.vertices, axis=1), 0.3)
    with pytest.raises(GeometryError):
        star_curve((0, 0), [0.3, 0.0, 0.3, 0.3])


def test_star_curve_densified_distance_close_to_circle():
    s = star_curve((0.5, 0.5), [0.3] * 100)
    rng = np.random.default_rng(3)
    pts = rng.uniform(0, 1, size=(500, 2))
    # chord error bound for the densified polyline
    segments = 600
    bound = (2 * np.pi * 0.3 / segments) ** 2 / (8 * 0.3)
    assert np.max(np.abs(s.sdf(pts) - C.sdf(pts))) < bound


def test_perturb_examples():
    verts = C.sample(256)
    zero = perturb(C, Perturbation(np.zeros((256, 2))))
    assert zero[1] == 0.0
    np.testing.assert_array_equal(zero[0].vertices, verts)
    normals = (verts - 0.5) / 0.3
    inflated, norm = perturb(C, Perturbation(0.01 * normals))
    np.testing.assert_allclose(np.linalg.norm(inflated.vertices - 0.5, axis=1), 0.31)
    assert norm == pytest.approx(0.01)
    star = star_curve((0.5, 0.5), np.full(50, 0.3))
    r = np.zeros((50, 2))
    r[7] = (0.02, 0.0)
    assert perturb(star, Perturbation(r))[1] == pytest.approx(0.02)


def test_perturb_rejects_invalid():
    sq = Polyline([(0, 0), (1, 0), (1, 1), (0, 1)])
    r = np.zeros((4, 2))
    r[0] = (1.5, 0.5)  # edge (0,1)->(1.5,0.5) now crosses edge x=1
    with pytest.raises(PerturbationError):
        perturb(sq, Perturbation(r))
    with pytest.raises(PerturbationError):
        perturb(C, Perturbation(np.full((64, 2), 0.5)), outer=Box.cube(0.0, 1.0))


def test_geometry_validation():
    Geometry(Box.cube(0, 1), [circle((0.3, 0.3), 0.1), circle((0.7, 0.7), 0.1)]).validate()
    with pytest.raises(GeometryError):
        Geometry(Box.cube(0, 1), [circle((0.5, 0.5), 0.6)]).validate()
    with pytest.raises(GeometryError):
        Geometry(Box.cube(0, 1), [circle((0.4, 0.5), 0.2), circle((0.6, 0.5), 0.2)]).validate()
    Geometry(star_curve((0, 0), [0.4] * 100), [LineX(0.0)]).validate()


def test_self_intersection_detection_backends_agree():
    bow = np.array([(0, 0), (1, 1), (1, 0), (0, 1), (0, 0)], dtype=float)
    assert _kernels_py.polyline_self_intersects(bow)
    assert kernels.polyline_self_intersects(bow)
    with pytest.raises(GeometryError):
        Polyline(bow)


def test_square_and_plane_labels():
    g = Geometry(Box.cube(0, 1), [AxisSquare((0.5, 0.5), 0.4)])
    labels = g.region_label([(0.5, 0.5), (0.1, 0.1), (0.3, 0.5)])
    np.testing.assert_array_equal(labels, [2, 1, 2])  # on-curve point counts as inside
    g3 = Geometry(Box.cube(0, 1, 3), [PlaneZ(0.4)])
    np.testing.assert_array_equal(g3.region_label([(0.5, 0.5, 0.2), (0.5, 0.5, 0.6)]), [2, 1])


def _random_star(seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(5, 40))
    return star_curve(rng.uniform(0.4, 0.6, 2), rng.uniform(0.1, 0.35, m))


@pytest.mark.parametrize("curve", [C, Ellipse((0.5, 0.5), 0.35, 0.2), _random_star(0)], ids=["circle", "ellipse", "star"])
def test_eikonal_property(curve):
    h = 1e-4
    rng = np.random.default_rng(4)
    pts = rng.uniform(0, 1, size=(2000, 2))
    far = np.abs(curve.sdf(pts)) > 2 * h
    # keep away from the medial axis, where the gradient genuinely jumps
    proj_dir = pts - curve.project(pts)
    pts = pts[far & (np.linalg.norm(proj_dir, axis=1) > 0)]
    gx = (curve.sdf(pts + [h, 0]) - curve.sdf(pts - [h, 0])) / (2 * h)
    gy = (curve.sdf(pts + [0, h]) - curve.sdf(pts - [0, h])) / (2 * h)
    dev = np.abs(np.hypot(gx, gy) - 1)
    assert np.mean(dev < 10 * h) > 0.97


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_label_sign_consistency(seed):
    curve = _random_star(seed)
    g = Geometry(Box.cube(0, 1), [curve])
    pts = np.random.default_rng(seed).uniform(0, 1, size=(400, 2))
    phi = curve.sdf(pts)
    lab = g.region_label(pts)
    clear = np.abs(phi) > 1e-12
    np.testing.assert_array_equal(lab[clear] == 2, phi[clear] < 0)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_projection_optimality(seed):
    curve = _random_star(seed)
    pts = np.random.default_rng(seed + 1).uniform(0, 1, size=(100, 2))
    proj = curve.project(pts)
    d_proj = np.linalg.norm(pts - proj, axis=1)
    d_verts = np.linalg.norm(pts[:, None, :] - curve.vertices[None], axis=2).min(axis=1)
    assert np.all(d_proj <= d_verts + 1e-12)
    np.testing.assert_allclose(d_proj, np.abs(curve.sdf(pts)), atol=1e-14)


def test_projection_optimality_1000_points():
    for seed in range(10):
        curve = _random_star(100 + seed)
        pts = np.random.default_rng(seed).uniform(0, 1, size=(100, 2))
        d_proj = np.linalg.norm(pts - curve.project(pts), axis=1)
        d_verts = np.linalg.norm(pts[:, None, :] - curve.vertices[None], axis=2).min(axis=1)
        assert np.all(d_proj <= d_verts + 1e-12)


def test_kernel_backends_agree():
    curve = _random_star(7)
    pts = np.random.default_rng(0).uniform(0, 1, size=(3000, 2))
    a = kernels.polyline_query(pts, curve._dense)
    b = _kernels_py.polyline_query(pts, curve._dense)
    np.testing.assert_allclose(a[0], b[0], atol=1e-14)
    np.testing.assert_allclose(a[1], b[1], atol=1e-14)
    np.testing.assert_array_equal(a[4], b[4])
