"""Artifact writers: CSV, JSON and SVG snapshots with byte-stable formatting."""

from __future__ import annotations

import csv
import io as _io
import json
import math
from pathlib import Path

import numpy as np

from .geom2d import ConvexDomain

COLOR_STOPS = [(0.0, (255, 255, 255)), (0.5, (116, 169, 207)), (1.0, (8, 48, 107))]


class PointsFileError(ValueError):
    pass


def _num(x: float) -> str:
    return f"{float(x):.6f}"


def color(t: float) -> str:
    t = min(max(float(t), 0.0), 1.0)
    for (t0, c0), (t1, c1) in zip(COLOR_STOPS, COLOR_STOPS[1:]):
        if t <= t1:
            s = 0.0 if t1 == t0 else (t - t0) / (t1 - t0)
            rgb = [round(a + s * (b - a)) for a, b in zip(c0, c1)]
            return "#%02x%02x%02x" % tuple(rgb)
    return "#%02x%02x%02x" % COLOR_STOPS[-1][1]


def render_svg(domain: ConvexDomain, cells, density, sites=None, vmax: float = 1.0, size: int = 512, edges=None) -> str:
    """Cells filled by density on the fixed scale [0, vmax], sites as dots.

    ``edges`` is an optional list of site index pairs drawn as dual edges.
    """
    v = domain.vertices
    lo, hi = v.min(0), v.max(0)
    span = float(max(hi - lo))
    s = size / span

    def tx(p):
        return _num((p[0] - lo[0]) * s), _num((hi[1] - p[1]) * s)

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
    ]
    dom = " ".join(",".join(tx(p)) for p in v)
    out.append(f'<polygon points="{dom}" fill="none" stroke="#000000" stroke-width="1"/>')
    for cell, rho in zip(cells, density):
        cv = cell.vertices if hasattr(cell, "vertices") else np.asarray(cell)
        if len(cv) < 3:
            continue
        pts = " ".join(",".join(tx(p)) for p in cv)
        fill = color(rho / vmax if vmax > 0 else 0.0)
        out.append(f'<polygon points="{pts}" fill="{fill}" stroke="#555555" stroke-width="0.3"/>')
    if edges is not None and sites is not None:
        for i, j in edges:
            (x1, y1), (x2, y2) = tx(sites[i]), tx(sites[j])
            out.append(f'<line x1="{x1}" y1="{y1}" x2="{x2}" y2="{y2}" stroke="#2c7a2c" stroke-width="0.6"/>')
    if sites is not None:
        r = _num(max(0.6, min(2.0, size / (8.0 * math.sqrt(max(len(sites), 1))))))
        for p in sites:
            x, y = tx(p)
            out.append(f'<circle cx="{x}" cy="{y}" r="{r}" fill="#c0392b"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_points_csv(path, points, masses=None) -> None:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", "y", "mass"] if masses is not None else ["x", "y"])
    for i, p in enumerate(points):
        row = [repr(float(p[0])), repr(float(p[1]))]
        if masses is not None:
            row.append(repr(float(masses[i])))
        w.writerow(row)
    Path(path).write_text(buf.getvalue())


def load_points_csv(path):
    """Read sites (x, y) and optional masses; masses are normalised to sum 1."""
    pts, ms = [], []
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise PointsFileError(f"{path}: empty file, header row required")
    header = [h.strip().lower() for h in rows[0]]
    if header[:2] != ["x", "y"] or len(header) > 3 or (len(header) == 3 and header[2] != "mass"):
        raise PointsFileError(f"{path}: header must be x,y[,mass], got {rows[0]}")
    has_mass = len(header) == 3
    for line, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise PointsFileError(f"{path}: line {line}: expected {len(header)} fields, got {len(row)}")
        try:
            vals = [float(c) for c in row]
        except ValueError:
            raise PointsFileError(f"{path}: line {line}: non-numeric field in {row}") from None
        if not all(math.isfinite(x) for x in vals):
            raise PointsFileError(f"{path}: line {line}: non-finite value in {row}")
        if has_mass and vals[2] <= 0:
            raise PointsFileError(f"{path}: line {line}: mass must be positive")
        pts.append(vals[:2])
        ms.append(vals[2] if has_mass else 1.0)
    if not pts:
        raise PointsFileError(f"{path}: no data rows")
    m = np.asarray(ms)
    return np.asarray(pts, dtype=float), m / m.sum()


def write_grid_csv(path, grid, density) -> None:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["ix", "iy", "x", "y", "density"])
    c = grid.centers()
    for k, rho in enumerate(density):
        w.writerow([k % grid.nx, k // grid.nx, repr(float(c[k, 0])), repr(float(c[k, 1])), repr(float(rho))])
    Path(path).write_text(buf.getvalue())


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_default, allow_nan=True) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(dumps(obj))
