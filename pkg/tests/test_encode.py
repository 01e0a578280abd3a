import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ifop.encode import (
    AssemblyError, ChannelTensor, EncodingError, assemble_input, encode_bulk, encode_characteristic,
    encode_manifold, encode_sdf,
)
from ifop.geometry import Box, Geometry, LineX, circle, star_curve
from ifop.grid import GridSpec

G5 = GridSpec(0.0, 1.0, 5)
CIRC = circle((0.5, 0.5), 0.3)


def test_characteristic_examples():
    np.testing.assert_array_equal(encode_characteristic(Geometry(Box.cube(0, 1)), G5).values, np.ones((5, 5)))
    v = encode_characteristic(Geometry(Box.cube(0, 1), [CIRC]), G5).values
    assert v[2, 2] == 2
    assert v[0, 0] == v[0, 4] == v[4, 0] == v[4, 4] == 1
    outer = Geometry(circle((0, 0), 0.3))
    w = encode_characteristic(outer, GridSpec(-0.5, 0.5, 5)).values
    assert w[0, 0] == w[0, 4] == w[4, 0] == w[4, 4] == 0


def test_sdf_examples():
    chans = encode_sdf(Geometry(Box.cube(0, 1), [CIRC]), G5)
    assert len(chans) == 2
    assert chans[1].values[2, 2] == pytest.approx(-0.3)
    assert chans[0].values[2, 2] == pytest.approx(-0.5)
    assert len(encode_sdf(Geometry(Box.cube(0, 1)), G5)) == 1


def test_bulk_examples():
    np.testing.assert_array_equal(encode_bulk(lambda p: np.ones(len(p)), Geometry(Box.cube(0, 1)), G5).values, 1.0)
    v = encode_bulk(1.0, Geometry(circle((0, 0), 0.3)), GridSpec(-0.5, 0.5, 5)).values
    assert v[0, 0] == 0 and v[2, 2] == 1
    x = encode_bulk(lambda p: p[:, 0], Geometry(Box.cube(0, 1)), GridSpec(0, 1, 3)).values
    np.testing.assert_allclose(x, [[0, 0, 0], [0.5, 0.5, 0.5], [1, 1, 1]])


def test_bulk_rejects_nonfinite():
    with pytest.raises(EncodingError, match=r"\(1, 2\)"):
        encode_bulk(lambda p: np.where((p[:, 0] == 0.25) & (p[:, 1] == 0.5), np.nan, 1.0), Geometry(Box.cube(0, 1)), G5)


def test_manifold_examples():
    grid = GridSpec(0.0, 1.0, 11)
    sigma = 0.05
    v = encode_manifold(1.0, CIRC, grid, sigma).values
    assert v[8, 5] == pytest.approx(1.0)  # (0.8, 0.5) lies on the circle
    line = LineX(0.3)
    w = encode_manifold(1.0, line, GridSpec(0, 1, 11), sigma=0.1).values
    assert w[4, 0] == pytest.approx(np.exp(-0.5))  # x=0.4 at distance sigma
    far = [encode_manifold(2.0, line, GridSpec(0, 1, 11), sigma=0.1).values[k, 0] for k in range(3, 11)]
    assert np.all(np.diff(far) < 0) and far[-1] < 1e-10


def test_manifold_uses_projection():
    grid = GridSpec(0.0, 1.0, 21)
    v = encode_manifold(lambda q: q[:, 1], LineX(0.5), grid, sigma=1e9).values
    np.testing.assert_allclose(v, np.tile(grid.axis(), (21, 1)))


def test_manifold_max_only_on_curve():
    grid = GridSpec(0.0, 1.0, 41)
    v = encode_manifold(1.0, CIRC, grid).values
    phi = CIRC.sdf(grid.points()).reshape(grid.shape)
    assert np.all((v == 1.0) == (np.abs(phi) <= 1e-12))


def test_assemble_default_three_channels():
    geom = Geometry(star_curve((0, 0), [0.4] * 100), [LineX(0.0)])
    grid = GridSpec(-0.5, 0.5, 100)
    s = assemble_input(geom, {"f": 1.0, "beta": 0.3, "g": 0.0}, "char", grid)
    assert s.data.shape == (3, 100, 100)
    assert s.names == ["geom/char", "func/f", "iface/beta"]


def test_assemble_sdf_counts_and_errors():
    geom = Geometry(Box.cube(0, 1), [CIRC])
    s = assemble_input(geom, {"f": 1.0}, "sdf", G5)
    assert s.names == ["geom/sdf/0", "geom/sdf/1", "func/f"]
    with pytest.raises(AssemblyError):
        assemble_input(geom, {"f": 1.0}, "sdf", G5, extra={"func/f": np.zeros((5, 5))})
    with pytest.raises(AssemblyError):
        assemble_input(geom, {"f": ChannelTensor(GridSpec(0, 1, 6), np.zeros((6, 6)))}, "sdf", G5)


def test_assemble_deterministic():
    geom = Geometry(Box.cube(0, 1), [star_curve((0.5, 0.5), np.linspace(0.2, 0.3, 40))])
    grid = GridSpec(0, 1, 33)
    a = assemble_input(geom, {"f": lambda p: np.sin(p[:, 0]), "alpha": 0.1, "beta": 0.05}, "sdf", grid)
    b = assemble_input(geom, {"f": lambda p: np.sin(p[:, 0]), "alpha": 0.1, "beta": 0.05}, "sdf", grid)
    assert a.data.tobytes() == b.data.tobytes()


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000))
def test_char_and_sdf_agree(seed):
    rng = np.random.default_rng(seed)
    outer = star_curve((0.5, 0.5), rng.uniform(0.3, 0.45, 30))
    geom = Geometry(outer, [circle((0.5, 0.5), 0.1)])
    grid = GridSpec(0, 1, 23)
    char = encode_characteristic(geom, grid).values
    phi = encode_sdf(geom, grid)[0].values
    assert set(np.unique(char)) <= {0.0, 1.0, 2.0}
    assert np.count_nonzero(char == 0) == np.count_nonzero(phi > 1e-12)
    np.testing.assert_array_equal(char == 0, phi > 1e-12)


@settings(max_examples=20, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3))
def test_bulk_linear(alpha, beta):
    geom = Geometry(circle((0.5, 0.5), 0.4))
    grid = GridSpec(0, 1, 9)
    f = lambda p: np.cos(3 * p[:, 0]) * p[:, 1]
    h = lambda p: p[:, 0] ** 2
    lhs = encode_bulk(lambda p: alpha * f(p) + beta * h(p), geom, grid).values
    rhs = alpha * encode_bulk(f, geom, grid).values + beta * encode_bulk(h, geom, grid).values
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)
