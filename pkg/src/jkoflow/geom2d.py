"""Planar convex geometry: polygons, half-plane clipping and polygon integrals."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .predicates import line_side, orient2d


class DegeneratePolygonError(ValueError):
    pass


@dataclass(frozen=True)
class HalfPlane:
    """The set {y : <normal, y> <= offset}."""

    normal: tuple[float, float]
    offset: float

    def __post_init__(self):
        if math.hypot(*self.normal) <= 0.0:
            raise ValueError("half-plane normal must be nonzero")

    def reversed(self) -> "HalfPlane":
        return HalfPlane((-self.normal[0], -self.normal[1]), -self.offset)


@dataclass(frozen=True, eq=False)
class ConvexPolygon:
    """Convex polygon with counterclockwise vertices; zero vertices means empty."""

    vertices: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float).reshape(-1, 2)
        object.__setattr__(self, "vertices", v)

    @classmethod
    def from_points(cls, pts: Sequence) -> "ConvexPolygon":
        """Convex hull of an arbitrary point cloud."""
        return cls(convex_hull(np.asarray(pts, dtype=float)))

    @classmethod
    def box(cls, x0: float, y0: float, x1: float, y1: float) -> "ConvexPolygon":
        return cls(np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=float))

    @property
    def is_empty(self) -> bool:
        return len(self.vertices) < 3

    def __len__(self) -> int:
        return len(self.vertices)

    def diameter(self) -> float:
        v = self.vertices
        if len(v) == 0:
            return 0.0
        d = v[:, None, :] - v[None, :, :]
        return float(np.sqrt((d**2).sum(-1)).max())

    def contains(self, pt, tol: float = 0.0) -> bool:
        v = self.vertices
        if self.is_empty:
            return False
        e = np.roll(v, -1, axis=0) - v
        w = np.asarray(pt, dtype=float) - v
        cross = e[:, 0] * w[:, 1] - e[:, 1] * w[:, 0]
        return bool(np.all(cross >= -tol * np.hypot(e[:, 0], e[:, 1])))

    def translate(self, t) -> "ConvexPolygon":
        return ConvexPolygon(self.vertices + np.asarray(t, dtype=float))


EMPTY = ConvexPolygon()


def convex_hull(pts: np.ndarray) -> np.ndarray:
    """Monotone chain hull, counterclockwise, collinear points dropped."""
    pts = np.unique(np.asarray(pts, dtype=float).reshape(-1, 2), axis=0)
    if len(pts) < 3:
        return pts
    pl = [tuple(p) for p in pts]

    def half(seq):
        out: list = []
        for p in seq:
            while len(out) >= 2 and orient2d(out[-2], out[-1], p) <= 0:
                out.pop()
            out.append(p)
        return out

    lower = half(pl)
    upper = half(reversed(pl))
    hull = lower[:-1] + upper[:-1]
    return np.array(hull, dtype=float).reshape(-1, 2)


def _cleanup(verts: list, labels: list | None, tol: float):
    """Merge consecutive vertices closer than ``tol``.

    When a zero-length edge is removed, the surviving vertex takes the label of
    the following edge so that labels keep describing the line each edge lies on.
    """
    changed = True
    while changed and len(verts) >= 2:
        changed = False
        n = len(verts)
        for i in range(n):
            j = (i + 1) % n
            if abs(verts[i][0] - verts[j][0]) <= tol and abs(verts[i][1] - verts[j][1]) <= tol:
                if labels is not None:
                    labels[i] = labels[j]
                    del labels[j]
                del verts[j]
                changed = True
                break
    return verts, labels


def clip_labeled(verts: list, labels: list, side, inter, new_label, tol: float):
    """Clip a labelled convex polygon by one half-plane.

    ``verts`` are (x, y) tuples, ``labels[i]`` names the line supporting the
    edge from ``verts[i]`` to ``verts[i+1]``.  ``side(v)`` returns the robust
    sign of the constraint at ``v`` (inside when <= 0) and ``inter(u, w, du, dw)``
    returns the crossing point on segment [u, w] given constraint values.
    """
    n = len(verts)
    if n == 0:
        return verts, labels
    s = [side(v) for v in verts]
    if max(s) <= 0:
        return verts, labels
    if min(s) >= 0:
        return [], []
    out_v: list = []
    out_l: list = []
    for i in range(n):
        j = (i + 1) % n
        si, sj = s[i], s[j]
        if si <= 0:
            if sj > 0:
                if si < 0:
                    out_v.append(verts[i])
                    out_l.append(labels[i])
                    out_v.append(inter(verts[i], verts[j]))
                    out_l.append(new_label)
                else:
                    out_v.append(verts[i])
                    out_l.append(new_label)
            else:
                out_v.append(verts[i])
                out_l.append(labels[i])
        elif sj < 0:
            out_v.append(inter(verts[i], verts[j]))
            out_l.append(labels[i])
    out_v, out_l = _cleanup(out_v, out_l, tol)
    if len(out_v) < 3:
        return [], []
    return out_v, out_l


def _line_intersector(normal, offset):
    nx, ny = float(normal[0]), float(normal[1])

    def inter(u, w):
        du = nx * u[0] + ny * u[1] - offset
        dw = nx * w[0] + ny * w[1] - offset
        t = du / (du - dw)
        return (u[0] + t * (w[0] - u[0]), u[1] + t * (w[1] - u[1]))

    return inter


def clip(poly: ConvexPolygon, h: HalfPlane) -> ConvexPolygon:
    """Intersection of a convex polygon with a half-plane (possibly empty)."""
    if poly.is_empty:
        return EMPTY
    verts = [tuple(v) for v in poly.vertices]
    labels = [0] * len(verts)
    tol = 1e-12 * max(poly.diameter(), 1e-300)
    nx, ny = float(h.normal[0]), float(h.normal[1])
    band = tol * math.hypot(nx, ny)

    def side(v):
        # points within the merge tolerance of the line count as on it, so
        # crossings computed by a previous clip are not cut again
        if abs(nx * v[0] + ny * v[1] - h.offset) <= band:
            return 0
        return line_side(h.normal, h.offset, v)

    out, _ = clip_labeled(verts, labels, side, _line_intersector(h.normal, h.offset), 1, tol)
    if not out:
        return EMPTY
    res = ConvexPolygon(np.array(out))
    return res if area(res) > 0.0 else EMPTY


def _edge_cross(v: np.ndarray, origin=None):
    a = v if origin is None else v - np.asarray(origin, dtype=float)
    b = np.roll(a, -1, axis=0)
    return a, b, a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]


def area(poly: ConvexPolygon) -> float:
    """Shoelace area; 0 for the empty polygon."""
    if poly.is_empty:
        return 0.0
    v = poly.vertices
    _, _, c = _edge_cross(v, v[0])
    return float(0.5 * c.sum())


def centroid(poly: ConvexPolygon) -> np.ndarray:
    A = area(poly)
    if A <= 0.0:
        raise DegeneratePolygonError("centroid of a degenerate polygon")
    o = poly.vertices[0]
    a, b, c = _edge_cross(poly.vertices, o)
    m = (c[:, None] * (a + b)).sum(0) / 6.0
    return o + m / A


def second_moment(poly: ConvexPolygon, p) -> float:
    """Exact value of the integral of |p - x|^2 over the polygon.

    Sums signed triangles (p, v_i, v_{i+1}); on each triangle the quadratic
    integrand is integrated in closed form from its vertices.
    """
    if poly.is_empty:
        return 0.0
    a, b, c = _edge_cross(poly.vertices, p)
    q = (a * a).sum(1) + (a * b).sum(1) + (b * b).sum(1)
    return float((c * q).sum() / 12.0)


def exterior_angles(v: np.ndarray) -> np.ndarray:
    d_in = v - np.roll(v, 1, axis=0)
    d_out = np.roll(v, -1, axis=0) - v
    cr = d_in[:, 0] * d_out[:, 1] - d_in[:, 1] * d_out[:, 0]
    dt = (d_in * d_out).sum(1)
    return np.arctan2(cr, dt)


def steiner_point(poly: ConvexPolygon) -> np.ndarray:
    """Steiner point: vertices weighted by their exterior angle over 2*pi.

    This is the closed form of (1/pi) * integral of h_K(u) u over the circle,
    evaluated arc by arc on the normal cone of each vertex.
    """
    if area(poly) <= 0.0:
        raise DegeneratePolygonError("Steiner point of a degenerate polygon")
    v = poly.vertices
    w = exterior_angles(v)
    return (w[:, None] * v).sum(0) / w.sum()


def minkowski_interpolate(A: ConvexPolygon, B: ConvexPolygon, t: float) -> ConvexPolygon:
    """(1 - t) A + t B as the hull of all pairwise vertex combinations."""
    if A.is_empty or B.is_empty:
        raise DegeneratePolygonError("Minkowski combination needs nonempty polygons")
    if t == 0.0:
        return ConvexPolygon(A.vertices.copy())
    if t == 1.0:
        return ConvexPolygon(B.vertices.copy())
    pts = (1.0 - t) * A.vertices[:, None, :] + t * B.vertices[None, :, :]
    return ConvexPolygon(convex_hull(pts.reshape(-1, 2)))


def intersect(P: ConvexPolygon, Q: ConvexPolygon) -> ConvexPolygon:
    """Intersection of two convex polygons."""
    out = P
    q = Q.vertices
    for i in range(len(q)):
        a, b = q[i], q[(i + 1) % len(q)]
        e = b - a
        n = (e[1], -e[0])  # outward normal for a ccw polygon
        out = clip(out, HalfPlane(n, n[0] * a[0] + n[1] * a[1]))
        if out.is_empty:
            return EMPTY
    return out


class ConvexDomain:
    """The target polygon Y; its edges are the boundary segments S."""

    def __init__(self, vertices):
        v = np.asarray(vertices, dtype=float).reshape(-1, 2)
        hull = convex_hull(v)
        if len(hull) < 3:
            raise ValueError("domain polygon is degenerate")
        if len(hull) != len(v):
            raise ValueError("domain vertices must be in convex position without repeats")
        self.polygon = ConvexPolygon(hull)
        self.vertices = hull
        nxt = np.roll(hull, -1, axis=0)
        e = nxt - hull
        self.normals = np.stack([e[:, 1], -e[:, 0]], axis=1)
        self.offsets = (self.normals * hull).sum(1)
        self.area = area(self.polygon)
        self.diam = self.polygon.diameter()

    @classmethod
    def square(cls, side: float, center=(0.0, 0.0)) -> "ConvexDomain":
        h = 0.5 * side
        cx, cy = center
        return cls([[cx - h, cy - h], [cx + h, cy - h], [cx + h, cy + h], [cx - h, cy + h]])

    @property
    def n_segments(self) -> int:
        return len(self.vertices)

    def segment(self, s: int) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices[s], self.vertices[(s + 1) % len(self.vertices)]

    def contains(self, pts, tol: float = 0.0) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        val = pts @ self.normals.T - self.offsets
        return np.all(val <= tol * np.linalg.norm(self.normals, axis=1), axis=1)

    def to_dict(self) -> dict:
        return {"vertices": self.vertices.tolist()}
