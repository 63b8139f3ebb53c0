"""Cell integrals of a Laguerre diagram and their exact derivatives in phi.

Every cell vertex is the solution of a 2x2 linear system whose right-hand
side is affine in phi, so within a fixed diagram topology each vertex is an
affine function of phi.  Any quantity built from polygon integrals therefore
has phi-derivatives ``D^T grad`` and phi-Hessian ``D^T hess D`` where ``D``
is the (sparse) vertex Jacobian; no second derivatives of vertices appear.

Per-edge primitives are written relative to the owning site ``p`` with
``a = v_i - p`` and ``b = v_{i+1} - p``:

    A  = sum cross(a, b) / 2
    M  = sum cross(a, b) (a + b) / 6          first moment of x - p
    Q  = sum cross(a, b) (|a|^2 + a.b + |b|^2) / 12   integral of |x - p|^2
    IV = sum cross(a, b) / 2 * quad_T(V)      integral of a field V (7-point rule)
    S  = sum w_i a_i / sum w_i                Steiner point minus p (vertex sum)
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from ._jets import Jet
from .laguerre import LaguerreDiagram

EDGE_PRIMS = ("A", "Mx", "My", "Q", "IV")
VERTEX_PRIMS = ("Sx", "Sy")


def _radon7():
    r = np.sqrt(15.0)
    a1, b1 = (9.0 - 2 * r) / 21.0, (6.0 + r) / 21.0
    a2, b2 = (9.0 + 2 * r) / 21.0, (6.0 - r) / 21.0
    w1, w2 = (155.0 + r) / 1200.0, (155.0 - r) / 1200.0
    bary = [(1 / 3, 1 / 3, 1 / 3)]
    wts = [9.0 / 40.0]
    for a, b, w in ((a1, b1, w1), (a2, b2, w2)):
        bary += [(a, b, b), (b, a, b), (b, b, a)]
        wts += [w, w, w]
    return np.array(bary), np.array(wts)


TRI_BARY, TRI_WEIGHTS = _radon7()

_HC = np.zeros((4, 4))
_HC[0, 3] = _HC[3, 0] = 1.0
_HC[1, 2] = _HC[2, 1] = -1.0
_HS2 = np.array([[2, 0, 1, 0], [0, 2, 0, 1], [1, 0, 2, 0], [0, 1, 0, 2]], dtype=float)


class CellCalculus:
    """Primitive cell integrals of a diagram with their edge-level jets."""

    def __init__(self, diagram: LaguerreDiagram, prims, field=None):
        d = diagram
        self.diagram = d
        self.n = n = d.n_sites
        self.prims = [k for k in EDGE_PRIMS + VERTEX_PRIMS if k in set(prims)]
        owner = d.vert_cell
        nxt = d.vert_next
        nv = len(owner)
        P = d.points
        u = d.vert_xy - P[owner]
        a, b = u, u[nxt]
        self.owner = owner

        D = np.zeros((nv, 4, 6))
        D[:, 0:2, 0:3] = d.vert_d
        D[:, 2:4, 3:6] = d.vert_d[nxt]
        self.edge_D = D
        slots = np.concatenate([d.vert_slots, d.vert_slots[nxt]], axis=1)
        self.edge_slots = np.where(slots >= 0, slots, n)

        cr = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
        cg = np.stack([b[:, 1], -b[:, 0], -a[:, 1], a[:, 0]], axis=1)
        c = Jet(cr, cg, np.broadcast_to(_HC, (nv, 4, 4)))
        zero_h = np.zeros((nv, 4, 4))
        jets: dict = {}
        if "A" in self.prims:
            jets["A"] = c * 0.5
        if "Mx" in self.prims or "My" in self.prims:
            lx = Jet(a[:, 0] + b[:, 0], np.tile([1.0, 0, 1.0, 0], (nv, 1)), zero_h)
            ly = Jet(a[:, 1] + b[:, 1], np.tile([0, 1.0, 0, 1.0], (nv, 1)), zero_h)
            jets["Mx"] = (c * lx) * (1.0 / 6.0)
            jets["My"] = (c * ly) * (1.0 / 6.0)
        if "Q" in self.prims:
            s2v = (a * a).sum(1) + (a * b).sum(1) + (b * b).sum(1)
            s2g = np.concatenate([2 * a + b, a + 2 * b], axis=1)
            s2 = Jet(s2v, s2g, np.broadcast_to(_HS2, (nv, 4, 4)))
            jets["Q"] = (c * s2) * (1.0 / 12.0)
        if "IV" in self.prims:
            if field is None:
                raise ValueError("IV primitive needs a potential field")
            val = np.zeros(nv)
            grad = np.zeros((nv, 4))
            hess = np.zeros((nv, 4, 4))
            Pv = P[owner]
            for (l0, l1, l2), w in zip(TRI_BARY, TRI_WEIGHTS):
                x = Pv + l1 * a + l2 * b
                fv, fg, fh = field(x)
                val += w * fv
                grad[:, 0:2] += (w * l1) * fg
                grad[:, 2:4] += (w * l2) * fg
                hess[:, 0:2, 0:2] += (w * l1 * l1) * fh
                hess[:, 0:2, 2:4] += (w * l1 * l2) * fh
                hess[:, 2:4, 0:2] += (w * l1 * l2) * fh
                hess[:, 2:4, 2:4] += (w * l2 * l2) * fh
            jets["IV"] = (c * 0.5) * Jet(val, grad, hess)
        self.jets = jets
        self.values = {k: np.bincount(owner, weights=j.val, minlength=n) for k, j in jets.items()}

        if "Sx" in self.prims or "Sy" in self.prims:
            prev = np.empty(nv, dtype=int)
            prev[nxt] = np.arange(nv)
            xy = d.vert_xy
            din = xy - xy[prev]
            dout = xy[nxt] - xy
            ext = np.arctan2(din[:, 0] * dout[:, 1] - din[:, 1] * dout[:, 0], (din * dout).sum(1))
            tot = np.bincount(owner, weights=ext, minlength=n)
            with np.errstate(invalid="ignore", divide="ignore"):
                w = ext / tot[owner]
            self.steiner_w = w
            self.values["Sx"] = np.bincount(owner, weights=w * u[:, 0], minlength=n)
            self.values["Sy"] = np.bincount(owner, weights=w * u[:, 1], minlength=n)
            vs = d.vert_slots
            self.vert_slots = np.where(vs >= 0, vs, n)

    # -- assembly -----------------------------------------------------------

    def _scatter_vec(self, slots, vals):
        return np.bincount(slots.ravel(), weights=vals.ravel(), minlength=self.n + 1)[: self.n]

    def gradient(self, fk: dict) -> np.ndarray:
        """sum over cells and primitives of f_k(cell) * d prim_k / d phi."""
        n = self.n
        g = np.zeros(n)
        ge = None
        for k, j in self.jets.items():
            if k in fk:
                t = fk[k][self.owner][:, None] * j.grad
                ge = t if ge is None else ge + t
        if ge is not None:
            g += self._scatter_vec(self.edge_slots, np.einsum("eij,ei->ej", self.edge_D, ge))
        if "Sx" in fk or "Sy" in fk:
            gv = np.zeros((len(self.owner), 2))
            if "Sx" in fk:
                gv[:, 0] = fk["Sx"][self.owner]
            if "Sy" in fk:
                gv[:, 1] = fk["Sy"][self.owner]
            gv *= self.steiner_w[:, None]
            g += self._scatter_vec(self.vert_slots, np.einsum("vij,vi->vj", self.diagram.vert_d, gv))
        return g

    def prim_matrix(self, keys) -> sp.csr_matrix:
        """Stacked Jacobians: row ``i * n + c`` is d prim_{keys[i]}(cell c) / d phi."""
        n = self.n
        rows, cols, vals = [], [], []
        for i, k in enumerate(keys):
            if k in self.jets:
                v = np.einsum("eij,ei->ej", self.edge_D, self.jets[k].grad)
                rows.append(np.repeat(i * n + self.owner, 6))
                cols.append(self.edge_slots.ravel())
                vals.append(v.ravel())
            elif k in VERTEX_PRIMS:
                comp = 0 if k == "Sx" else 1
                v = self.diagram.vert_d[:, comp, :] * self.steiner_w[:, None]
                rows.append(np.repeat(i * n + self.owner, 3))
                cols.append(self.vert_slots.ravel())
                vals.append(v.ravel())
        if not rows:
            return sp.csr_matrix((len(keys) * n, n))
        m = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(len(keys) * n, n + 1),
        ).tocsr()
        return m[:, :n]

    def hessian(self, fk: dict, fkl: dict) -> sp.csr_matrix:
        """Hessian of sum_c f(prims(c)) given outer first and second derivatives."""
        n = self.n
        he = None
        for k, j in self.jets.items():
            if k in fk:
                t = fk[k][self.owner][:, None, None] * j.hess
                he = t if he is None else he + t
        H = sp.csr_matrix((n, n))
        if he is not None:
            D = self.edge_D
            blk = np.einsum("eai,eab,ebj->eij", D, he, D)
            s = self.edge_slots
            r = np.repeat(s, 6, axis=1)
            cidx = np.tile(s, (1, 6))
            H = sp.coo_matrix((blk.ravel(), (r.ravel(), cidx.ravel())), shape=(n + 1, n + 1)).tocsr()[:n, :n]
        keys = sorted({k for pair in fkl for k in pair}, key=self.prims.index)
        if keys:
            G = self.prim_matrix(keys)
            idx = {k: i for i, k in enumerate(keys)}
            rows, cols, vals = [], [], []
            base = np.arange(n)
            for (k, l), v in fkl.items():
                rows.append(idx[k] * n + base)
                cols.append(idx[l] * n + base)
                vals.append(v)
            F = sp.coo_matrix(
                (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                shape=(len(keys) * n, len(keys) * n),
            ).tocsr()
            H = H + (G.T @ F @ G)
        return H.tocsr()
