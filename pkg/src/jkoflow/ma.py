"""Discrete Monge-Ampere operator: cell areas and their derivatives in phi."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .assembly import CellCalculus
from .geom2d import ConvexDomain
from .laguerre import COND_LIMIT, LaguerreDiagram, SingularVertexError, build_diagram


class NotInteriorError(ValueError):
    def __init__(self, msg="phi is not in interior of K_Y(P)"):
        super().__init__(msg)


def _diagram(P, phi, Y, diagram=None) -> LaguerreDiagram:
    return diagram if diagram is not None else build_diagram(P, phi, Y)


def ma(P, phi, Y: ConvexDomain, diagram=None) -> np.ndarray:
    """Cell areas, one per site."""
    return _diagram(P, phi, Y, diagram).areas.copy()


def interiority(P, phi, Y: ConvexDomain, diagram=None) -> bool:
    """True iff every cell area is strictly above the empty-cell tolerance."""
    return _diagram(P, phi, Y, diagram).is_interior()


def _require_interior(d: LaguerreDiagram):
    if not d.is_interior():
        bad = np.flatnonzero(d.areas <= d.empty_tolerance())
        raise NotInteriorError(f"phi is not in interior of K_Y(P): empty cells {bad[:10].tolist()}")


def ma_jacobian(P, phi, Y: ConvexDomain, diagram=None) -> sp.csr_matrix:
    """J[p, q] = |shared edge| / |p - q| off the diagonal, rows summing to zero."""
    d = _diagram(P, phi, Y, diagram)
    _require_interior(d)
    n = d.n_sites
    q = d.vert_lab[:, 1]
    keep = q >= 0
    i = np.flatnonzero(keep)
    p = d.vert_slots[i, 0]
    q = q[i]
    seg = d.vert_xy[d.vert_next[i]] - d.vert_xy[i]
    length = np.hypot(seg[:, 0], seg[:, 1])
    dist = np.linalg.norm(d.points[p] - d.points[q], axis=1)
    w = 0.5 * length / dist  # each shared edge is seen from both cells
    off = sp.coo_matrix((w, (p, q)), shape=(n, n)).tocsr()
    off = off + off.T
    diag = np.asarray(off.sum(axis=1)).ravel()
    return (off - sp.diags(diag)).tocsr()


@dataclass
class MaHessian:
    """Sparse 3-tensor H[p, q, r] = d^2 MA(p) / d phi(q) d phi(r)."""

    n: int
    p: np.ndarray
    q: np.ndarray
    r: np.ndarray
    val: np.ndarray
    fd_rows: list = field(default_factory=list)

    @property
    def nnz(self) -> int:
        return len(self.val)

    def to_dense(self) -> np.ndarray:
        H = np.zeros((self.n, self.n, self.n))
        np.add.at(H, (self.p, self.q, self.r), self.val)
        return H

    def contract(self, delta) -> sp.csr_matrix:
        """Matrix M[p, q] = sum_r H[p, q, r] delta[r]."""
        delta = np.asarray(delta, dtype=float)
        return sp.coo_matrix((self.val * delta[self.r], (self.p, self.q)), shape=(self.n, self.n)).tocsr()

    def slice(self, p: int) -> np.ndarray:
        m = self.p == p
        H = np.zeros((self.n, self.n))
        np.add.at(H, (self.q[m], self.r[m]), self.val[m])
        return H

    def pattern_violations(self, diagram: LaguerreDiagram) -> list:
        """Nonzeros whose index set is not a site, a dual edge or a dual triangle containing p."""
        edges = set(diagram.edges)
        tris = {t for t in diagram.dual.triangles if min(t) >= 0}
        bad = []
        for p, q, r in zip(self.p.tolist(), self.q.tolist(), self.r.tolist()):
            s = tuple(sorted({p, q, r}))
            if len(s) == 1:
                continue
            if len(s) == 2 and s in edges:
                continue
            if len(s) == 3 and s in tris:
                continue
            bad.append((p, q, r))
        return bad


def _coo_from_blocks(n, owner, slots, blk):
    k = slots.shape[1]
    P_ = np.repeat(owner, k * k)
    Q_ = np.repeat(slots, k, axis=1).ravel()
    R_ = np.tile(slots, (1, k)).ravel()
    v = blk.ravel()
    m = (Q_ < n) & (R_ < n)
    key = (P_[m] * (n + 1) + Q_[m]) * (n + 1) + R_[m]
    uk, inv = np.unique(key, return_inverse=True)
    vals = np.bincount(inv, weights=v[m])
    scale = np.repeat(np.abs(blk).reshape(len(blk), k * k).max(1, initial=0.0), k * k)
    mag = np.bincount(inv, weights=scale[m])
    # mixed terms of consecutive vertices cancel exactly off the dual pattern
    vals[np.abs(vals) <= 1e-11 * mag] = 0.0
    r = uk % (n + 1)
    q = (uk // (n + 1)) % (n + 1)
    p = uk // (n + 1) ** 2
    return p, q, r, vals


def _fd_rows(P, phi, Y, rows, h):
    """Central differences of Jacobian rows, one phi direction at a time."""
    n = len(phi)
    out = {}
    for p in rows:
        out[p] = np.zeros((n, n))
    for r in range(n):
        e = np.zeros(n)
        e[r] = h
        try:
            Jp = ma_jacobian(P, phi + e, Y)
            Jm = ma_jacobian(P, phi - e, Y)
        except NotInteriorError:
            continue
        for p in rows:
            out[p][:, r] = (Jp.getrow(p).toarray().ravel() - Jm.getrow(p).toarray().ravel()) / (2 * h)
    return out


def ma_hessian(P, phi, Y: ConvexDomain, mode: str = "analytic", diagram=None) -> MaHessian:
    """Second derivatives of all cell areas.

    ``mode="analytic"`` differentiates edge lengths through the vertex
    derivatives; rows of cells touching a vertex whose linear system has
    condition number above ``COND_LIMIT`` are replaced by finite differences
    of the Jacobian.  ``mode="fd"`` uses finite differences everywhere.
    """
    P = np.asarray(P, dtype=float)
    phi = np.asarray(phi, dtype=float)
    d = _diagram(P, phi, Y, diagram)
    _require_interior(d)
    n = d.n_sites
    h = 1e-4 * (1.0 + np.abs(phi).max())
    if mode == "fd":
        rows = list(range(n))
    elif mode == "analytic":
        rows = sorted(set(d.vert_cell[~(d.vert_cond <= COND_LIMIT)].tolist()))
    else:
        raise ValueError(f"unknown hessian mode {mode!r}")
    cc = CellCalculus(d, ["A"])
    He = cc.jets["A"].hess
    D = cc.edge_D
    blk = np.einsum("eai,eab,ebj->eij", D, He, D)
    if rows:
        drop = np.isin(cc.owner, rows)
        blk = blk[~drop]
        owner, slots = cc.owner[~drop], cc.edge_slots[~drop]
    else:
        owner, slots = cc.owner, cc.edge_slots
    p, q, r, v = _coo_from_blocks(n, owner, slots, blk)
    if rows:
        fd = _fd_rows(P, phi, Y, rows, h)
        ps, qs, rs, vs = [p], [q], [r], [v]
        for row, M in fd.items():
            M = 0.5 * (M + M.T)
            qq, rr = np.nonzero(np.abs(M) > 1e-12 * max(1.0, np.abs(M).max()))
            ps.append(np.full(len(qq), row))
            qs.append(qq)
            rs.append(rr)
            vs.append(M[qq, rr])
        p, q, r, v = (np.concatenate(a) for a in (ps, qs, rs, vs))
    keep = v != 0.0
    return MaHessian(n, p[keep], q[keep], r[keep], v[keep], fd_rows=rows)


def cell_vertex_jacobian_ok(d: LaguerreDiagram) -> None:
    """Raise if some vertex system is singular, naming its triple."""
    bad = np.flatnonzero(~np.isfinite(d.vert_cond))
    if len(bad):
        i = bad[0]
        trip = (int(d.vert_slots[i, 0]), int(d.vert_lab[i, 0]), int(d.vert_lab[i, 1]))
        raise SingularVertexError(f"singular vertex system for triple {trip}")


@dataclass
class LogConcavityReport:
    n_checks: int
    violations: int
    max_violation: float
    tol: float = 1e-9

    @property
    def ok(self) -> bool:
        return self.violations == 0


def segment_logconcavity_check(P, phi0, phi1, Y: ConvexDomain, t_samples=None, tol: float = 1e-9) -> LogConcavityReport:
    """Check log MA(phi_t) >= (1-t) log MA(phi_0) + t log MA(phi_1) sitewise."""
    if t_samples is None:
        t_samples = np.linspace(0.1, 0.9, 9)
    phi0 = np.asarray(phi0, dtype=float)
    phi1 = np.asarray(phi1, dtype=float)
    with np.errstate(divide="ignore"):
        l0 = np.log(ma(P, phi0, Y))
        l1 = np.log(ma(P, phi1, Y))
        worst, nviol, nchk = 0.0, 0, 0
        for t in t_samples:
            lt = np.log(ma(P, (1 - t) * phi0 + t * phi1, Y))
            rhs = (1 - t) * l0 + t * l1
            ok = np.isfinite(rhs)
            gap = np.where(ok, rhs - lt, -np.inf)
            gap = np.where(ok & ~np.isfinite(lt), np.inf, gap)
            nchk += int(ok.sum())
            nviol += int((gap > tol).sum())
            if ok.any():
                worst = max(worst, float(gap[ok].max()))
    return LogConcavityReport(nchk, nviol, worst, tol)
