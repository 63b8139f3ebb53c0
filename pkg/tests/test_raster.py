import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jkoflow.geom2d import ConvexDomain
from jkoflow.laguerre import build_diagram
from jkoflow.raster import Grid, overlap_areas, rasterize


def test_grid_geometry():
    g = Grid.square(4.0, 8)
    assert g.dx == g.dy == 0.5 and g.pixel_area == 0.25
    c = g.centers()
    assert c.shape == (64, 2)
    np.testing.assert_allclose(c[0], [-1.75, -1.75])
    np.testing.assert_allclose(c[1], [-1.25, -1.75])


def test_pixel_aligned_square():
    g = Grid.square(4.0, 8)
    idx, a = overlap_areas([[0, 0], [1, 0], [1, 1], [0, 1]], g)
    assert sorted(idx) == sorted([4 * 8 + 4, 4 * 8 + 5, 5 * 8 + 4, 5 * 8 + 5])
    np.testing.assert_allclose(a, 0.25)


def test_triangle_halves_pixel():
    g = Grid(0.0, 0.0, 1.0, 1.0, 1, 1)
    idx, a = overlap_areas([[0, 0], [1, 0], [0, 1]], g)
    assert idx == [0] and a[0] == pytest.approx(0.5)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 30))
def test_mass_conserved(seed, n):
    rng = np.random.default_rng(seed)
    Y = ConvexDomain.square(2.0)
    P = rng.uniform(-0.9, 0.9, (n, 2))
    d = build_diagram(P, 0.5 * (P**2).sum(1), Y)
    rho = rng.uniform(0.1, 2.0, n)
    m = rasterize(d.cells, rho, Grid.square(2.0, 17))
    assert m.sum() == pytest.approx(float(rho @ d.areas), rel=1e-13)
    assert np.all(m >= 0)


def test_uniform_density_fills_grid():
    Y = ConvexDomain.square(2.0)
    rng = np.random.default_rng(3)
    P = rng.uniform(-0.9, 0.9, (25, 2))
    d = build_diagram(P, 0.5 * (P**2).sum(1), Y)
    g = Grid.square(2.0, 10)
    m = rasterize(d.cells, np.ones(25), g)
    np.testing.assert_allclose(m, g.pixel_area, rtol=1e-12)
