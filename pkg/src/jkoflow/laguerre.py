"""Laguerre cells clipped to a convex polygon and their dual triangulation.

The cell of site ``p`` under the potential ``phi`` is

    V(p) = {y in Y : phi(q) >= phi(p) + <q - p, y> for every site q},

i.e. the power cell with weight ``|p|^2 - 2 phi(p)`` intersected with ``Y``.

Elements of P u S are encoded as integers: site ``i`` is ``i >= 0`` and
boundary segment ``s`` (the edge from ``Y.vertices[s]`` to the next vertex)
is ``-(s + 1)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .geom2d import ConvexDomain, ConvexPolygon, EMPTY, _cleanup, clip_labeled
from .predicates import bisector_side, orient2d

logger = logging.getLogger(__name__)

EMPTY_CELL_RTOL = 1e-14
COND_LIMIT = 1e12


class DegenerateConfigurationError(ValueError):
    """Raised when the site set cannot be processed (e.g. repeated sites)."""


class SingularVertexError(ValueError):
    pass


def seg_label(s: int) -> int:
    return -(s + 1)


def label_segment(label: int) -> int:
    return -label - 1


def power_weights(points, phi) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    return (points**2).sum(1) - 2.0 * np.asarray(phi, dtype=float)


@dataclass(frozen=True)
class DualTriangulation:
    edges: frozenset
    triangles: frozenset
    vertices: dict = field(hash=False, compare=False)

    def euler_defect(self, n_cells: int, n_segments: int) -> int:
        """0 when the triangle/edge counts match the cell complex of a disk.

        ``n_cells`` counts nonempty cells only; empty cells have no dual vertex.
        Only meaningful in general position: a vertex shared by k > 3 cells
        contributes every one of its k-choose-3 triples.
        """
        return len(self.triangles) - (len(self.edges) - n_segments) + n_cells - 1


def _all_pairs(n: int):
    i, j = np.nonzero(~np.eye(n, dtype=bool))
    return i, j


def _candidate_pairs(points: np.ndarray, phi: np.ndarray):
    """Directed neighbour pairs (src, dst) of the unclipped Laguerre diagram.

    They are the edges of the lower convex hull of the lifted points
    (p, phi(p)).  Extra candidates are harmless (they only add redundant
    constraints), so degenerate inputs fall back to joggling or all pairs.
    """
    n = len(points)
    if n <= 3:
        return _all_pairs(n)
    xy = points - points.mean(0)
    z = phi - phi.mean()
    zs = np.abs(z).max()
    scale = np.abs(xy).max()
    if zs > 0:
        z = z * (scale / zs)
    lifted = np.column_stack([xy, z])
    hull = None
    for opts in ("Qt", "QJ"):
        try:
            hull = ConvexHull(lifted, qhull_options=opts)
            break
        except (QhullError, ValueError):
            continue
    if hull is None:
        logger.debug("lifted hull failed; using all pairs for %d sites", n)
        return _all_pairs(n)
    tri = hull.simplices[hull.equations[:, 2] < 1e-10]
    src = np.concatenate([tri[:, 0], tri[:, 1], tri[:, 2], tri[:, 1], tri[:, 2], tri[:, 0]])
    dst = np.concatenate([tri[:, 1], tri[:, 2], tri[:, 0], tri[:, 0], tri[:, 1], tri[:, 2]])
    key = np.unique(src.astype(np.int64) * n + dst)
    return key // n, key % n


def _candidate_neighbors(points: np.ndarray, phi: np.ndarray) -> list[set]:
    src, dst = _candidate_pairs(points, phi)
    nb: list[set] = [set() for _ in range(len(points))]
    for a, b in zip(src.tolist(), dst.tolist()):
        nb[a].add(b)
    return nb


@dataclass(eq=False)
class LaguerreDiagram:
    points: np.ndarray
    phi: np.ndarray
    domain: ConvexDomain
    cells: list
    labels: list
    areas: np.ndarray
    # per-vertex data, cells stored contiguously (see cell_ptr)
    vert_xy: np.ndarray
    vert_lab: np.ndarray  # (nv, 2) labels of the incoming and outgoing edge
    vert_slots: np.ndarray  # (nv, 3) site indices [p, L_in, L_out], -1 for segments
    vert_d: np.ndarray  # (nv, 2, 3) derivative of the vertex w.r.t. phi at the slots
    vert_cond: np.ndarray
    cell_ptr: np.ndarray

    @property
    def n_sites(self) -> int:
        return len(self.points)

    @cached_property
    def vert_cell(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_sites), np.diff(self.cell_ptr))

    @cached_property
    def vert_next(self) -> np.ndarray:
        idx = np.arange(len(self.vert_xy))
        nxt = idx + 1
        ends = self.cell_ptr[1:][np.diff(self.cell_ptr) > 0] - 1
        starts = self.cell_ptr[:-1][np.diff(self.cell_ptr) > 0]
        nxt[ends] = starts
        return nxt

    def empty_tolerance(self) -> float:
        return EMPTY_CELL_RTOL * self.domain.area

    def is_interior(self) -> bool:
        return bool(np.all(self.areas > self.empty_tolerance()))

    def _edge_arrays(self):
        xy, nxt = self.vert_xy, self.vert_next
        length = np.hypot(*(xy[nxt] - xy).T)
        return self.vert_slots[:, 0].tolist(), self.vert_lab[:, 1].tolist(), length.tolist()

    @cached_property
    def edges(self) -> dict:
        """Site pairs (p, q), p < q, with a shared edge: {length, endpoints}."""
        acc: dict = {}
        xy, nxt = self.vert_xy, self.vert_next
        for i, (p, q, length) in enumerate(zip(*self._edge_arrays())):
            if q < 0 or length <= 0.0:
                continue
            key = (min(p, q), max(p, q))
            if key in acc:
                acc[key]["length"] = 0.5 * (acc[key]["length"] + length)
            else:
                acc[key] = {"length": length, "endpoints": (xy[i].copy(), xy[nxt[i]].copy())}
        return acc

    @cached_property
    def boundary_edges(self) -> dict:
        """(site, segment label) -> length of the cell boundary on that segment."""
        out: dict = {}
        for p, lab, length in zip(*self._edge_arrays()):
            if lab < 0 and length > 0.0:
                out[(p, lab)] = length
        return out

    @cached_property
    def dual(self) -> DualTriangulation:
        edges = set(self.edges.keys())
        for (p, s) in self.boundary_edges:
            edges.add((s, p))
        k = self.domain.n_segments
        for s in range(k):
            a, b = seg_label(s), seg_label((s + 1) % k)
            edges.add((min(a, b), max(a, b)))
        tris = {}
        trip = np.sort(np.column_stack([self.vert_slots[:, 0], self.vert_lab[:, :2]]), axis=1).tolist()
        for i, tri in enumerate(trip):
            if tuple(tri) not in tris:
                tris[tuple(tri)] = self.vert_xy[i].copy()
        return DualTriangulation(frozenset(edges), frozenset(tris), tris)

    def euler_defect(self) -> int:
        n_cells = int(np.count_nonzero(np.diff(self.cell_ptr) > 0))
        return self.dual.euler_defect(n_cells, self.domain.n_segments)

    def to_dict(self) -> dict:
        return {
            "domain": self.domain.to_dict(),
            "sites": self.points.tolist(),
            "phi": self.phi.tolist(),
            "cells": [c.vertices.tolist() for c in self.cells],
            "areas": self.areas.tolist(),
            "edges": [
                {"p": p, "q": q, "length": e["length"]} for (p, q), e in sorted(self.edges.items())
            ],
            "dual_triangles": [list(t) for t in sorted(self.dual.triangles)],
        }


def _line_rows(points, phi, domain, p, labels):
    """Normals and offsets of the lines named by ``labels`` relative to site ``p``."""
    labels = np.asarray(labels)
    site = labels >= 0
    n = np.empty(labels.shape + (2,))
    c = np.empty(labels.shape)
    li = np.where(site, labels, 0)
    si = np.where(site, 0, -labels - 1)
    n[site] = points[li[site]] - points[p[site]]
    c[site] = phi[li[site]] - phi[p[site]]
    n[~site] = domain.normals[si[~site]]
    c[~site] = domain.offsets[si[~site]]
    return n, c, site


def _solve_vertices(points, phi, domain, owner, lab_in, lab_out):
    """Vectorised 2x2 solves for vertices given their two active lines."""
    n1, c1, s1 = _line_rows(points, phi, domain, owner, lab_in)
    n2, c2, s2 = _line_rows(points, phi, domain, owner, lab_out)
    det = n1[:, 0] * n2[:, 1] - n1[:, 1] * n2[:, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = ((n1**2).sum(1) + (n2**2).sum(1)) / np.abs(det)
        inv = np.empty((len(det), 2, 2))
        inv[:, 0, 0] = n2[:, 1] / det
        inv[:, 0, 1] = -n1[:, 1] / det
        inv[:, 1, 0] = -n2[:, 0] / det
        inv[:, 1, 1] = n1[:, 0] / det
        xy = np.einsum("vij,vj->vi", inv, np.stack([c1, c2], axis=1))
    d = np.zeros((len(det), 2, 3))
    d[:, :, 1] = np.where(s1[:, None], inv[:, :, 0], 0.0)
    d[:, :, 2] = np.where(s2[:, None], inv[:, :, 1], 0.0)
    d[:, :, 0] = -(d[:, :, 1] + d[:, :, 2])
    return xy, d, cond


def build_diagram(points, phi, domain: ConvexDomain, method: str = "vector") -> LaguerreDiagram:
    """Clipped Laguerre diagram of ``points`` under ``phi`` inside ``domain``.

    Each cell starts as Y and is clipped by the bisector constraints of its
    candidate neighbours, nearest first, with exact sign decisions.
    ``method="reference"`` runs the same clipping one cell at a time.
    """
    P = np.ascontiguousarray(points, dtype=float).reshape(-1, 2)
    phi = np.ascontiguousarray(phi, dtype=float).reshape(-1)
    n = len(P)
    if n == 0:
        raise DegenerateConfigurationError("empty site set")
    if len(phi) != n:
        raise ValueError("phi must have one value per site")
    if not (np.all(np.isfinite(P)) and np.all(np.isfinite(phi))):
        raise ValueError("sites and potential must be finite")
    uniq, inv, counts = np.unique(P, axis=0, return_inverse=True, return_counts=True)
    if len(uniq) < n:
        dup = [np.flatnonzero(inv.ravel() == k).tolist() for k in np.flatnonzero(counts > 1)]
        raise DegenerateConfigurationError(f"repeated sites {dup}")

    tol = 1e-12 * domain.diam
    src, dst = _candidate_pairs(P, phi)
    if method == "vector":
        counts, clip_xy, lab_out = _clip_cells_vector(P, phi, domain, src, dst, tol)
    elif method == "reference":
        counts, clip_xy, lab_out = _clip_cells_reference(P, phi, domain, src, dst, tol)
    else:
        raise ValueError(f"unknown clipping method {method!r}")
    owner = np.repeat(np.arange(n), counts)
    ptr0 = np.concatenate([[0], np.cumsum(counts)])
    prev = np.arange(len(lab_out)) - 1
    nz = counts > 0
    prev[ptr0[:-1][nz]] = ptr0[1:][nz] - 1
    lab_in = lab_out[prev] if len(lab_out) else lab_out.copy()

    xy, d, cond = _solve_vertices(P, phi, domain, owner, lab_in, lab_out)
    bad = ~(cond < COND_LIMIT)
    xy[bad] = clip_xy[bad]
    corner = (lab_in < 0) & (lab_out < 0)
    if np.any(corner):
        s_in = -lab_in[corner] - 1
        k = domain.n_segments
        ok = (s_in + 1) % k == -lab_out[corner] - 1
        cxy = domain.vertices[(s_in + 1) % k]
        xy[np.flatnonzero(corner)[ok]] = cxy[ok]
    slots = np.stack([owner, np.where(lab_in >= 0, lab_in, -1), np.where(lab_out >= 0, lab_out, -1)], axis=1)

    ptr = np.concatenate([[0], np.cumsum(counts)])
    areas = np.zeros(n)
    if len(xy):
        nxt = np.arange(len(xy)) + 1
        nz = counts > 0
        nxt[ptr[1:][nz] - 1] = ptr[:-1][nz]
        rel = xy - P[owner]
        cr = rel[:, 0] * rel[nxt, 1] - rel[:, 1] * rel[nxt, 0]
        areas = 0.5 * np.bincount(owner, weights=cr, minlength=n)

    # drop cells at or below the emptiness threshold
    empty = areas <= EMPTY_CELL_RTOL * domain.area
    if np.any(empty & (counts > 0)):
        keep = ~empty[owner]
        xy, d, cond, slots = xy[keep], d[keep], cond[keep], slots[keep]
        lab_in, lab_out = lab_in[keep], lab_out[keep]
        counts = np.where(empty, 0, counts)
        ptr = np.concatenate([[0], np.cumsum(counts)])
    areas = np.where(empty, 0.0, areas)

    cells, labels = [], []
    for p in range(n):
        a, b = ptr[p], ptr[p + 1]
        cells.append(ConvexPolygon(xy[a:b]) if b > a else EMPTY)
        labels.append(lab_out[a:b].copy())
    return LaguerreDiagram(
        points=P,
        phi=phi,
        domain=domain,
        cells=cells,
        labels=labels,
        areas=areas,
        vert_xy=xy,
        vert_lab=np.stack([lab_in, lab_out], axis=1).reshape(-1, 2),
        vert_slots=slots.reshape(-1, 3),
        vert_d=d.reshape(-1, 2, 3),
        vert_cond=cond,
        cell_ptr=ptr,
    )


def _neighbor_table(P, src, dst):
    """Candidate neighbours of every site as a padded (n, D) table, nearest first."""
    n = len(P)
    d2 = ((P[dst] - P[src]) ** 2).sum(1)
    order = np.lexsort((dst, d2, src))
    src, dst = src[order], dst[order]
    deg = np.bincount(src, minlength=n)
    D = int(deg.max()) if n else 0
    start = np.concatenate([[0], np.cumsum(deg)])[:-1]
    col = np.arange(len(src)) - start[src]
    NB = np.full((n, D), -1, dtype=np.int64)
    NB[src, col] = dst
    return NB, deg


def _pack(cells):
    counts = np.array([len(v) for v, _ in cells], dtype=int)
    xy = np.array([v for verts, _ in cells for v in verts], dtype=float).reshape(-1, 2)
    lab = np.array([l for _, labs in cells for l in labs], dtype=int)
    return counts, xy, lab


def _clip_cells_reference(P, phi, domain, src, dst, tol):
    n = len(P)
    NB, deg = _neighbor_table(P, src, dst)
    ydom = [tuple(v) for v in domain.vertices]
    ylab = [seg_label(s) for s in range(domain.n_segments)]
    Pl = P.tolist()
    phil = phi.tolist()
    cells: list = []
    for p in range(n):
        if n > 1 and deg[p] == 0:
            # not on the lower hull of the lifted sites: empty Laguerre cell
            cells.append(([], []))
            continue
        verts, labs = list(ydom), list(ylab)
        pp, fp = Pl[p], phil[p]
        for q in NB[p, : deg[p]].tolist():
            qq, fq = Pl[q], phil[q]
            ax, ay, b = qq[0] - pp[0], qq[1] - pp[1], fq - fp

            def side(v, qq=qq, fq=fq):
                return bisector_side(pp, qq, fp, fq, v)

            def inter(u, w, ax=ax, ay=ay, b=b):
                du = ax * u[0] + ay * u[1] - b
                dw = ax * w[0] + ay * w[1] - b
                t = du / (du - dw)
                return (u[0] + t * (w[0] - u[0]), u[1] + t * (w[1] - u[1]))

            verts, labs = clip_labeled(verts, labs, side, inter, q, tol)
            if not verts:
                break
        cells.append((verts, labs))
    return _pack(cells)


_SIDE_BOUND = 12.0 * 2.0**-53


def _clip_cells_vector(P, phi, domain, src, dst, tol):
    """All cells clipped by their j-th neighbour at once, j = 0, 1, ...

    Signs use the float expression and error bound of ``bisector_side``; the
    rare ambiguous ones are settled exactly.  Output matches the per-cell
    reference clipping.
    """
    n = len(P)
    k = domain.n_segments
    NB, deg = _neighbor_table(P, src, dst)
    D = NB.shape[1]
    M = k + D + 2
    V = np.zeros((n, M, 2))
    L = np.zeros((n, M), dtype=np.int64)
    V[:, :k] = domain.vertices
    L[:, :k] = [seg_label(s) for s in range(k)]
    cnt = np.full(n, k)
    if n > 1:
        cnt[deg == 0] = 0
    for j in range(D):
        rows = np.flatnonzero((NB[:, j] >= 0) & (cnt >= 3))
        if not len(rows):
            continue
        q = NB[rows, j]
        c = cnt[rows]
        m = int(c.max())
        Vr = V[rows, :m]
        Lr = L[rows, :m]
        idx = np.arange(m)
        valid = idx[None, :] < c[:, None]
        px, py = P[rows, 0][:, None], P[rows, 1][:, None]
        qx, qy = P[q, 0][:, None], P[q, 1][:, None]
        fp, fq = phi[rows][:, None], phi[q][:, None]
        ax, ay, b = qx - px, qy - py, fq - fp
        vx, vy = Vr[..., 0], Vr[..., 1]
        dv = ax * vx + ay * vy - b
        bound = _SIDE_BOUND * ((np.abs(qx) + np.abs(px)) * np.abs(vx) + (np.abs(qy) + np.abs(py)) * np.abs(vy) + np.abs(fq) + np.abs(fp))
        s = np.sign(dv).astype(np.int64)
        for r, t in zip(*np.nonzero(valid & (np.abs(dv) <= bound))):
            s[r, t] = bisector_side(P[rows[r]], P[q[r]], phi[rows[r]], phi[q[r]], Vr[r, t])
        smax = np.where(valid, s, -2).max(1)
        smin = np.where(valid, s, 2).min(1)
        gone = (smax > 0) & (smin >= 0)
        cnt[rows[gone]] = 0
        work = (smax > 0) & ~gone
        if not work.any():
            continue
        rows, q, c = rows[work], q[work], c[work]
        Vr, Lr, s, dv, valid = Vr[work], Lr[work], s[work], dv[work], valid[work]
        nxt = idx[None, :] + 1
        nxt = np.where(nxt >= c[:, None], 0, nxt)
        sj = np.take_along_axis(s, nxt, 1)
        dj = np.take_along_axis(dv, nxt, 1)
        Vj = np.take_along_axis(Vr, nxt[..., None], 1)
        e_vert = valid & (s <= 0)
        e_exit = valid & (s < 0) & (sj > 0)
        e_enter = valid & (s > 0) & (sj < 0)
        count = e_vert.astype(int) + e_exit + e_enter
        pos = np.cumsum(count, 1) - count
        with np.errstate(invalid="ignore", divide="ignore"):
            t = dv / (dv - dj)
            X = Vr + t[..., None] * (Vj - Vr)
        lab_vert = np.where((s == 0) & (sj > 0), q[:, None], Lr)
        newV = np.zeros((len(rows), M, 2))
        newL = np.zeros((len(rows), M), dtype=np.int64)
        r, i = np.nonzero(e_vert)
        newV[r, pos[r, i]] = Vr[r, i]
        newL[r, pos[r, i]] = lab_vert[r, i]
        r, i = np.nonzero(e_exit)
        newV[r, pos[r, i] + 1] = X[r, i]
        newL[r, pos[r, i] + 1] = q[r]
        r, i = np.nonzero(e_enter)
        newV[r, pos[r, i]] = X[r, i]
        newL[r, pos[r, i]] = Lr[r, i]
        newc = count.sum(1)
        # near-duplicate vertices are merged one cell at a time, as in the reference
        mm = int(newc.max())
        ii = np.arange(mm)
        nx2 = np.where(ii[None, :] + 1 >= newc[:, None], 0, ii[None, :] + 1)
        W = newV[:, :mm]
        Wn = np.take_along_axis(W, nx2[..., None], 1)
        close = (ii[None, :] < newc[:, None]) & np.all(np.abs(W - Wn) <= tol, axis=2)
        for r in np.flatnonzero(close.any(1)):
            vl = [tuple(v) for v in newV[r, : newc[r]]]
            ll = newL[r, : newc[r]].tolist()
            vl, ll = _cleanup(vl, ll, tol)
            newc[r] = len(vl)
            if vl:
                newV[r, : len(vl)] = vl
                newL[r, : len(vl)] = ll
        newc[newc < 3] = 0
        V[rows] = newV
        L[rows] = newL
        cnt[rows] = newc
    cnt[cnt < 3] = 0
    mask = np.arange(M)[None, :] < cnt[:, None]
    return cnt, V[mask], L[mask]


def is_interpolate(points, phi, domain: ConvexDomain) -> bool:
    """True when every clipped cell is nonempty."""
    return build_diagram(points, phi, domain).is_interior()


def cell_vertex(p: int, q: int, r: int, points, phi, domain: ConvexDomain) -> np.ndarray:
    """The point V(pqr) where the cells/segments p, q, r meet."""
    elems = [p, q, r]
    sites = [e for e in elems if e >= 0]
    if not sites:
        raise ValueError("a dual triangle needs at least one site")
    base = sites[0]
    others = [e for e in elems if e != base]
    if len(others) != 2:
        raise ValueError("triple must have three distinct elements")
    P = np.asarray(points, dtype=float)
    f = np.asarray(phi, dtype=float)
    xy, _, cond = _solve_vertices(P, f, domain, np.array([base]), np.array([others[0]]), np.array([others[1]]))
    if not cond[0] < COND_LIMIT:
        raise SingularVertexError(f"vertex system for {tuple(elems)} is singular")
    return xy[0]


@dataclass
class GenericityReport:
    collinear_triples: list
    bisector_segment_pairs: list

    @property
    def ok(self) -> bool:
        return not self.collinear_triples and not self.bisector_segment_pairs


def genericity_check(points, domain: ConvexDomain) -> GenericityReport:
    """Flag collinear site triples and bisectors lying along boundary segments."""
    from fractions import Fraction as F

    P = np.asarray(points, dtype=float).reshape(-1, 2)
    n = len(P)
    triples: set = set()
    for i in range(n):
        d = np.delete(P, i, axis=0) - P[i]
        idx = np.delete(np.arange(n), i)
        flip = (d[:, 1] < 0) | ((d[:, 1] == 0) & (d[:, 0] < 0))
        d[flip] *= -1
        ang = np.arctan2(d[:, 1], d[:, 0])
        order = np.argsort(ang, kind="stable")
        a_sorted = ang[order]
        close = np.flatnonzero(np.diff(a_sorted) <= 1e-12)
        for k in close:
            j0 = k
            while j0 > 0 and a_sorted[j0] - a_sorted[j0 - 1] <= 1e-12:
                j0 -= 1
            a, b = idx[order[k]], idx[order[k + 1]]
            for j in range(j0, k + 1):
                a = idx[order[j]]
                if orient2d(P[i], P[a], P[b]) == 0:
                    triples.add(tuple(sorted((i, int(a), int(b)))))
    pairs = []
    for s in range(domain.n_segments):
        a, b = domain.segment(s)
        e = b - a
        for i in range(n):
            dq = P[i + 1 :] - P[i]
            mid = 0.5 * (P[i + 1 :] + P[i])
            par = np.abs(dq @ e) <= 1e-9 * np.linalg.norm(dq, axis=1) * np.linalg.norm(e)
            on = np.abs(e[0] * (mid[:, 1] - a[1]) - e[1] * (mid[:, 0] - a[0])) <= 1e-9 * np.linalg.norm(e) * domain.diam
            for j in np.flatnonzero(par & on):
                qj = i + 1 + int(j)
                dx, dy = F(P[qj, 0]) - F(P[i, 0]), F(P[qj, 1]) - F(P[i, 1])
                ex, ey = F(b[0]) - F(a[0]), F(b[1]) - F(a[1])
                mx, my = (F(P[qj, 0]) + F(P[i, 0])) / 2, (F(P[qj, 1]) + F(P[i, 1])) / 2
                if dx * ex + dy * ey == 0 and ex * (my - F(a[1])) - ey * (mx - F(a[0])) == 0:
                    pairs.append((i, qj, s))
    return GenericityReport(sorted(triples), pairs)
