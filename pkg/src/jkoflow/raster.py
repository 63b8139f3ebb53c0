"""Exact overlap areas between convex polygons and an axis-aligned pixel grid."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Grid:
    x0: float
    y0: float
    x1: float
    y1: float
    nx: int
    ny: int

    @classmethod
    def square(cls, side: float, n: int) -> "Grid":
        h = 0.5 * side
        return cls(-h, -h, h, h, n, n)

    @property
    def dx(self) -> float:
        return (self.x1 - self.x0) / self.nx

    @property
    def dy(self) -> float:
        return (self.y1 - self.y0) / self.ny

    @property
    def pixel_area(self) -> float:
        return self.dx * self.dy

    def centers(self) -> np.ndarray:
        """Pixel centres, row-major with x fastest: index = iy * nx + ix."""
        xs = self.x0 + (np.arange(self.nx) + 0.5) * self.dx
        ys = self.y0 + (np.arange(self.ny) + 0.5) * self.dy
        X, Y = np.meshgrid(xs, ys)
        return np.column_stack([X.ravel(), Y.ravel()])

    def xedge(self, i: int) -> float:
        return self.x0 + (self.x1 - self.x0) * i / self.nx

    def yedge(self, j: int) -> float:
        return self.y0 + (self.y1 - self.y0) * j / self.ny


def _clip_axis(poly, axis, value, keep_below):
    """Clip a polygon (list of (x, y)) to coordinate <= value (or >= value)."""
    out = []
    n = len(poly)
    if n == 0:
        return out
    for i in range(n):
        a = poly[i]
        b = poly[(i + 1) % n]
        da = a[axis] - value
        db = b[axis] - value
        if not keep_below:
            da, db = -da, -db
        if da <= 0:
            out.append(a)
        if (da < 0 < db) or (db < 0 < da):
            t = da / (da - db)
            p = (a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]))
            if axis == 0:
                p = (value, p[1])
            else:
                p = (p[0], value)
            out.append(p)
    return out if len(out) >= 3 else []


def _area(poly) -> float:
    s = 0.0
    n = len(poly)
    x0, y0 = poly[0]
    for i in range(1, n - 1):
        x1, y1 = poly[i]
        x2, y2 = poly[i + 1]
        s += (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
    return 0.5 * s


def overlap_areas(vertices, grid: Grid):
    """Pixel indices and overlap areas of one convex polygon, by strip clipping."""
    v = np.asarray(vertices, dtype=float)
    if len(v) < 3:
        return [], []
    i0 = max(int(np.floor((v[:, 0].min() - grid.x0) / grid.dx)), 0)
    i1 = min(int(np.floor((v[:, 0].max() - grid.x0) / grid.dx)), grid.nx - 1)
    j0 = max(int(np.floor((v[:, 1].min() - grid.y0) / grid.dy)), 0)
    j1 = min(int(np.floor((v[:, 1].max() - grid.y0) / grid.dy)), grid.ny - 1)
    poly = [tuple(p) for p in v]
    idx, areas = [], []
    rest = poly
    for i in range(i0, i1 + 1):
        if not rest:
            break
        if i < i1:
            col = _clip_axis(rest, 0, grid.xedge(i + 1), True)
            rest = _clip_axis(rest, 0, grid.xedge(i + 1), False)
        else:
            col, rest = rest, []
        r2 = col
        for j in range(j0, j1 + 1):
            if not r2:
                break
            if j < j1:
                pix = _clip_axis(r2, 1, grid.yedge(j + 1), True)
                r2 = _clip_axis(r2, 1, grid.yedge(j + 1), False)
            else:
                pix, r2 = r2, []
            if pix:
                a = _area(pix)
                if a > 0.0:
                    idx.append(j * grid.nx + i)
                    areas.append(a)
    return idx, areas


def rasterize(polygons, density, grid: Grid) -> np.ndarray:
    """Pixel masses of a density that is constant on each polygon.

    The polygons are assumed to tile a subset of the grid rectangle; each
    polygon's overlap areas are rescaled to sum to its own shoelace area so
    that mass is conserved to rounding.
    """
    mass = np.zeros(grid.nx * grid.ny)
    for poly, rho in zip(polygons, density):
        v = poly.vertices if hasattr(poly, "vertices") else np.asarray(poly)
        if len(v) < 3:
            continue
        idx, a = overlap_areas(v, grid)
        if not idx:
            continue
        a = np.asarray(a)
        total = _area([tuple(p) for p in v])
        a *= total / a.sum()
        np.add.at(mass, idx, rho * a)
    return mass
