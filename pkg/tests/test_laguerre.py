import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import interior_instance
from jkoflow.geom2d import ConvexDomain
from jkoflow.laguerre import (
    DegenerateConfigurationError,
    build_diagram,
    cell_vertex,
    genericity_check,
    is_interpolate,
    power_weights,
    seg_label,
)
from jkoflow.validate import mc_area_oracle

UNIT = ConvexDomain([[0, 0], [1, 0], [1, 1], [0, 1]])
SQ2 = ConvexDomain.square(2.0)


def test_single_site_is_whole_domain():
    for phi in (0.0, 3.7, -12.0):
        d = build_diagram(np.array([[0.0, 0.0]]), np.array([phi]), UNIT)
        assert d.areas[0] == 1.0
        assert len(d.cells[0]) == 4


def test_two_symmetric_sites():
    P = np.array([[-1.0, 0.0], [1.0, 0.0]])
    d = build_diagram(P, np.zeros(2), SQ2)
    np.testing.assert_allclose(d.areas, [2.0, 2.0], rtol=1e-15)
    assert set(d.edges) == {(0, 1)}
    assert d.edges[(0, 1)]["length"] == pytest.approx(2.0)
    assert np.all(np.abs(d.cells[0].vertices[:, 0]) <= 1.0)
    assert d.cells[0].vertices[:, 0].max() == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("c,empty", [(1.5, False), (1.99, False), (2.0, True), (2.5, True)])
def test_vanishing_cell_threshold(c, empty):
    # cell of (1, 0) is {y_x >= c / 2}: it vanishes for c >= 2
    P = np.array([[-1.0, 0.0], [1.0, 0.0]])
    phi = np.array([0.0, c])
    d = build_diagram(P, phi, SQ2)
    assert (not d.is_interior()) == empty
    assert is_interpolate(P, phi, SQ2) == (not empty)
    est, se = mc_area_oracle(P, phi, SQ2, 200_000, seed=3)
    assert abs(est[1] - d.areas[1]) <= 4 * se[1] + 4.0 / 200_000
    assert d.areas[1] == pytest.approx(max(0.0, 2.0 * (1.0 - c / 2.0)), abs=1e-14)


def test_power_diagram_identity(rng):
    """argmax <y, p> - phi(p) equals argmin |y - p|^2 - w_p with w = |p|^2 - 2 phi."""
    P, phi = interior_instance(rng, 25, SQ2)
    w = power_weights(P, phi)
    np.testing.assert_allclose(w, (P**2).sum(1) - 2 * phi)
    y = rng.uniform(-1, 1, size=(20_000, 2))
    a = np.argmax(y @ P.T - phi, axis=1)
    b = np.argmin(((y[:, None, :] - P[None]) ** 2).sum(-1) - w, axis=1)
    assert np.mean(a == b) == 1.0
    # and both agree with the constructed cells
    d = build_diagram(P, phi, SQ2)
    for k in range(0, len(y), 997):
        assert d.cells[a[k]].contains(y[k], tol=1e-9)


def test_partition_and_constant_shift(rng):
    for n in (2, 5, 40, 150):
        P, phi = interior_instance(rng, n, SQ2)
        d = build_diagram(P, phi, SQ2)
        assert d.areas.sum() == pytest.approx(4.0, rel=1e-12)
        e = build_diagram(P, phi + 17.25, SQ2)
        np.testing.assert_allclose(e.areas, d.areas, rtol=0, atol=1e-13)
        assert set(e.edges) == set(d.edges)


def test_edge_lengths_match_endpoints(rng):
    P, phi = interior_instance(rng, 40, SQ2)
    d = build_diagram(P, phi, SQ2)
    for e in d.edges.values():
        a, b = e["endpoints"]
        assert e["length"] == pytest.approx(float(np.hypot(*(b - a))), rel=1e-9)


def test_vector_and_reference_clipping_agree(rng):
    for trial in range(30):
        n = int(rng.integers(2, 120))
        if trial % 3 == 0:
            k = int(np.ceil(np.sqrt(n)))
            g = np.linspace(-0.8, 0.8, k)
            P = np.array([(x, y) for x in g for y in g])[:n]
        else:
            P = rng.uniform(-0.95, 0.95, size=(n, 2))
        phi = 0.5 * (P**2).sum(1) + 0.05 * rng.normal(size=len(P)) * (trial % 2)
        a = build_diagram(P, phi, SQ2, method="vector")
        b = build_diagram(P, phi, SQ2, method="reference")
        np.testing.assert_array_equal(a.cell_ptr, b.cell_ptr)
        np.testing.assert_array_equal(a.vert_lab, b.vert_lab)
        np.testing.assert_allclose(a.areas, b.areas, rtol=0, atol=1e-14)


def test_unknown_method():
    with pytest.raises(ValueError):
        build_diagram(np.zeros((1, 2)), np.zeros(1), SQ2, method="magic")


def test_euler_relation_random(rng):
    for _ in range(50):
        P, phi = interior_instance(rng, int(rng.integers(2, 80)), SQ2, noise=0.2)
        assert build_diagram(P, phi, SQ2).euler_defect() == 0


def test_hidden_site_gets_empty_cell():
    P = np.array([[-0.5, 0.0], [0.5, 0.0], [0.0, 0.0]])
    phi = np.array([0.0, 0.0, 5.0])
    d = build_diagram(P, phi, SQ2)
    assert d.areas[2] == 0.0
    assert d.areas.sum() == pytest.approx(4.0)
    assert not d.is_interior()


def test_repeated_sites_rejected():
    P = np.array([[0.1, 0.2], [0.3, 0.3], [0.1, 0.2]])
    with pytest.raises(DegenerateConfigurationError, match=r"\[0, 2\]"):
        build_diagram(P, np.zeros(3), SQ2)


def test_input_validation():
    with pytest.raises(ValueError):
        build_diagram(np.zeros((2, 2)) + [[0, 0], [1, 0]], np.zeros(3), SQ2)
    with pytest.raises(ValueError):
        build_diagram(np.array([[0.0, np.nan]]), np.zeros(1), SQ2)


def test_cell_vertex_examples():
    P = np.array([[-1.0, 0.0], [1.0, 0.0]])
    # top edge y = 1 of the square is segment 2 (counterclockwise from the lower left corner)
    np.testing.assert_allclose(cell_vertex(0, 1, seg_label(2), P, np.zeros(2), SQ2), [0.0, 1.0], atol=1e-15)
    ang = np.deg2rad([0.0, 120.0, 240.0])
    P3 = np.column_stack([np.cos(ang), np.sin(ang)])
    np.testing.assert_allclose(cell_vertex(0, 1, 2, P3, np.zeros(3), ConvexDomain.square(4.0)), [0.0, 0.0], atol=1e-15)


def test_cell_vertex_matches_diagram(rng):
    P, phi = interior_instance(rng, 30, SQ2)
    d = build_diagram(P, phi, SQ2)
    for tri, xy in list(d.dual.vertices.items())[:40]:
        v = cell_vertex(*tri, P, phi, SQ2)
        np.testing.assert_allclose(v, xy, atol=1e-9)
        for s in tri:
            if s >= 0:
                assert d.cells[s].contains(v, tol=1e-9)


def test_genericity_check():
    r = genericity_check(np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]), SQ2)
    assert r.collinear_triples == [(0, 1, 2)]
    Y = ConvexDomain([[-1, 0], [1, 0], [1, 1], [-1, 1]])
    r = genericity_check(np.array([[0.0, -1.0], [0.0, 1.0]]), Y)
    assert r.bisector_segment_pairs and r.bisector_segment_pairs[0][:2] == (0, 1)
    rng = np.random.default_rng(0)
    assert genericity_check(rng.uniform(-1, 1, (60, 2)), SQ2).ok


@given(st.integers(0, 2**31), st.floats(0.05, 0.95))
@settings(max_examples=25, deadline=None)
def test_cell_inclusion_under_interpolation(seed, t):
    """(1-t) cell_0(p) + t cell_1(p) lies inside cell_t(p)."""
    from jkoflow.geom2d import minkowski_interpolate

    rng = np.random.default_rng(seed)
    P, phi0 = interior_instance(rng, 8, SQ2, noise=0.1)
    phi1 = 0.5 * (P**2).sum(1) + 0.1 * rng.normal(size=len(P))
    d0, d1 = build_diagram(P, phi0, SQ2), build_diagram(P, phi1, SQ2)
    if not d1.is_interior():
        return
    dt = build_diagram(P, (1 - t) * phi0 + t * phi1, SQ2)
    for p in range(len(P)):
        M = minkowski_interpolate(d0.cells[p], d1.cells[p], t)
        lo, hi = M.vertices.min(0), M.vertices.max(0)
        z = rng.uniform(lo, hi, size=(200, 2))
        z = z[[M.contains(q) for q in z]]
        for q in z:
            # the constraint form of the cell, with a boundary tolerance
            lhs = (1 - t) * phi0 + t * phi1
            assert np.all(lhs - lhs[p] - (P - P[p]) @ q >= -1e-9)


def test_diagram_to_dict_roundtrip(rng):
    import json

    P, phi = interior_instance(rng, 10, SQ2)
    d = build_diagram(P, phi, SQ2)
    data = json.loads(json.dumps(d.to_dict()))
    assert len(data["cells"]) == 10
    assert sum(data["areas"]) == pytest.approx(4.0)
    assert all(len(t) == 3 for t in data["dual_triangles"])
