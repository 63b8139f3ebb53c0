import math

import numpy as np
import pytest

from jkoflow.geom2d import ConvexDomain
from jkoflow.io import PointsFileError, color, dumps, load_points_csv, render_svg, write_points_csv
from jkoflow.laguerre import build_diagram


def test_csv_single_point(tmp_path):
    f = tmp_path / "p.csv"
    f.write_text("x,y\n0.5,0.5\n")
    P, m = load_points_csv(f)
    np.testing.assert_array_equal(P, [[0.5, 0.5]])
    np.testing.assert_array_equal(m, [1.0])


def test_csv_masses_normalised(tmp_path):
    f = tmp_path / "p.csv"
    f.write_text("x,y,mass\n0,0,2\n1,1,2\n")
    _, m = load_points_csv(f)
    np.testing.assert_array_equal(m, [0.5, 0.5])


@pytest.mark.parametrize(
    "body, needle",
    [
        ("x,y\n0,0\nnan,1\n", "line 3"),
        ("x,y\n0,abc\n", "line 2"),
        ("x,y\n0\n", "line 2"),
        ("a,b\n0,0\n", "header"),
        ("x,y,mass\n0,0,-1\n", "positive"),
        ("x,y\n", "no data"),
        ("", "empty"),
    ],
)
def test_csv_errors(tmp_path, body, needle):
    f = tmp_path / "bad.csv"
    f.write_text(body)
    with pytest.raises(PointsFileError, match=needle):
        load_points_csv(f)


def test_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    P = rng.normal(size=(7, 2))
    m = rng.uniform(1, 2, 7)
    m /= m.sum()
    write_points_csv(tmp_path / "p.csv", P, m)
    Q, w = load_points_csv(tmp_path / "p.csv")
    np.testing.assert_array_equal(P, Q)
    np.testing.assert_allclose(w, m, rtol=1e-15)


def test_color_scale():
    assert color(0.0) == "#ffffff"
    assert color(1.0) == "#08306b"
    assert color(2.0) == color(1.0)
    assert color(-1.0) == color(0.0)


def test_svg_deterministic():
    Y = ConvexDomain.square(2.0)
    P = np.array([[-0.5, 0.1], [0.4, -0.3], [0.2, 0.6]])
    d = build_diagram(P, 0.5 * (P**2).sum(1), Y)
    rho = 1.0 / d.areas / 3
    a = render_svg(Y, d.cells, rho, P, vmax=1.0, edges=[(0, 1)])
    b = render_svg(Y, d.cells, rho, P, vmax=1.0, edges=[(0, 1)])
    assert a == b
    assert a.count("<polygon") == 4 and a.count("<circle") == 3 and a.count("<line") == 1


def test_dumps_stable():
    s = dumps({"b": np.float64(1.5), "a": np.arange(2), "c": math.inf})
    assert s.index('"a"') < s.index('"b"')
    assert "Infinity" in s
