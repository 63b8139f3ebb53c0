"""Pushforwards, transport costs, energies and the JKO objective in phi."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from ._jets import Jet, compose_field
from .assembly import CellCalculus
from .geom2d import ConvexDomain, centroid, second_moment, steiner_point
from .laguerre import LaguerreDiagram, build_diagram

PRIM_ORDER = ("A", "Mx", "My", "Q", "IV", "Sx", "Sy")


class InfeasibleSelectionError(ValueError):
    pass


# -- measures and selections ----------------------------------------------------


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    sites: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.sites, dtype=float).reshape(-1, 2)
        m = np.asarray(self.masses, dtype=float).ravel()
        if len(s) != len(m):
            raise ValueError("sites and masses differ in length")
        if len(m) == 0 or np.any(~np.isfinite(m)) or np.any(m <= 0):
            raise ValueError("masses must be finite and positive")
        if abs(m.sum() - 1.0) > 1e-12:
            raise ValueError(f"masses sum to {m.sum()!r}, expected 1")
        object.__setattr__(self, "sites", s)
        object.__setattr__(self, "masses", m)

    @classmethod
    def uniform(cls, sites) -> "DiscreteMeasure":
        s = np.asarray(sites, dtype=float).reshape(-1, 2)
        return cls(s, np.full(len(s), 1.0 / len(s)))

    @classmethod
    def normalized(cls, sites, weights) -> "DiscreteMeasure":
        w = np.asarray(weights, dtype=float)
        return cls(sites, w / w.sum())

    def __len__(self):
        return len(self.masses)


@dataclass(frozen=True, eq=False)
class GradientSelection:
    """One chosen point of each cell, the image of the site under the transport."""

    points: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "points", np.asarray(self.points, dtype=float).reshape(-1, 2))

    @classmethod
    def steiner(cls, diagram: LaguerreDiagram) -> "GradientSelection":
        return cls(np.array([steiner_point(c) for c in diagram.cells]))

    @classmethod
    def centroid(cls, diagram: LaguerreDiagram) -> "GradientSelection":
        return cls(np.array([centroid(c) for c in diagram.cells]))

    @classmethod
    def of(cls, diagram: LaguerreDiagram, kind: str) -> "GradientSelection":
        if kind == "steiner":
            return cls.steiner(diagram)
        if kind == "centroid":
            return cls.centroid(diagram)
        raise ValueError(f"unknown selection {kind!r}")

    def violation(self, P, phi, Y: ConvexDomain) -> float:
        """Largest violation of phi(q) >= phi(p) + <q - p, G(p)> and of G(p) in Y."""
        P = np.asarray(P, dtype=float)
        phi = np.asarray(phi, dtype=float)
        G = self.points
        # lhs[p, q] = phi(p) + <q - p, G_p> - phi(q)
        lhs = phi[:, None] + G @ P.T - (P * G).sum(1)[:, None] - phi[None, :]
        dom = (G @ Y.normals.T - Y.offsets) / np.linalg.norm(Y.normals, axis=1)
        return float(max(lhs.max(), dom.max(), 0.0))

    def check_feasible(self, P, phi, Y: ConvexDomain, tol: float = 1e-9) -> None:
        v = self.violation(P, phi, Y)
        if v > tol:
            raise InfeasibleSelectionError(f"selection violates the subgradient constraints by {v:.3e}")


def discrete_pushforward(mu: DiscreteMeasure, G: GradientSelection, phi=None, Y=None) -> DiscreteMeasure:
    """Move each mass to its selected point, merging coincident targets.

    Feasibility of ``G`` is checked when ``phi`` and ``Y`` are supplied.
    """
    if len(G.points) != len(mu):
        raise ValueError("selection and measure differ in length")
    if phi is not None and Y is not None:
        G.check_feasible(mu.sites, phi, Y)
    pts, inv = np.unique(G.points, axis=0, return_inverse=True)
    masses = np.bincount(inv.ravel(), weights=mu.masses, minlength=len(pts))
    return DiscreteMeasure(pts, masses / masses.sum())


@dataclass(eq=False)
class AcPushforward:
    """Piecewise-constant density mu_p / MA(p) on the cells."""

    diagram: LaguerreDiagram
    density: np.ndarray

    @property
    def cells(self):
        return self.diagram.cells

    def total_mass(self) -> float:
        return float((self.density * self.diagram.areas).sum())


def ac_pushforward(mu: DiscreteMeasure, phi, Y: ConvexDomain, diagram=None) -> AcPushforward:
    from .ma import _require_interior

    d = diagram if diagram is not None else build_diagram(mu.sites, phi, Y)
    _require_interior(d)
    return AcPushforward(d, mu.masses / d.areas)


def wasserstein_discrete(mu: DiscreteMeasure, G: GradientSelection) -> float:
    """Squared transport cost sum_p mu_p |p - G(p)|^2."""
    return float((mu.masses * ((mu.sites - G.points) ** 2).sum(1)).sum())


def wasserstein_ac(mu: DiscreteMeasure, phi, Y: ConvexDomain, diagram=None) -> float:
    """Squared transport cost of spreading each mass uniformly over its cell."""
    ac = ac_pushforward(mu, phi, Y, diagram)
    return float(sum(r * second_moment(c, p) for r, c, p in zip(ac.density, ac.cells, mu.sites)))


# -- energy specifications ----------------------------------------------------------


@dataclass(frozen=True)
class InternalEnergySpec:
    """Internal energy density U with U(0) = 0.

    ``entropy`` is U(r) = r log r, evaluated as -sum mu_p log MA(p) (the
    constant sum mu_p log mu_p is dropped).  ``power`` is r^m / (m - 1),
    ``congestion`` is beta * r^alpha * (-log(1 - sqrt(r))), infinite for r >= 1.
    """

    kind: str = "entropy"
    m: float = 2.0
    alpha: float = 1.0
    beta: float = 1.0
    U: Optional[Callable] = None
    dU: Optional[Callable] = None
    d2U: Optional[Callable] = None
    custom_superlinear: bool = False

    def __post_init__(self):
        if self.kind not in ("entropy", "power", "congestion", "custom"):
            raise ValueError(f"unknown internal energy kind {self.kind!r}")
        if self.kind == "power" and (self.m <= 0 or self.m == 1.0):
            raise ValueError("power energy needs m > 0, m != 1 (use entropy for m = 1)")
        if self.kind == "congestion" and (self.alpha <= 0 or self.beta <= 0):
            raise ValueError("congestion needs alpha > 0 and beta > 0")
        if self.kind == "custom" and None in (self.U, self.dU, self.d2U):
            raise ValueError("custom energy needs U, dU and d2U")

    @classmethod
    def from_dict(cls, d: dict) -> "InternalEnergySpec":
        d = dict(d)
        kind = d.pop("kind")
        if kind == "power" and float(d.get("m", 2.0)) == 1.0:
            return cls("entropy")
        allowed = {"entropy": set(), "power": {"m"}, "congestion": {"alpha", "beta"}}
        if kind not in allowed:
            raise ValueError(f"unknown internal energy kind {kind!r}")
        extra = set(d) - allowed[kind]
        if extra:
            raise ValueError(f"unknown keys for {kind} energy: {sorted(extra)}")
        return cls(kind, **{k: float(v) for k, v in d.items()})

    def to_dict(self) -> dict:
        if self.kind == "power":
            return {"kind": "power", "m": self.m}
        if self.kind == "congestion":
            return {"kind": "congestion", "alpha": self.alpha, "beta": self.beta}
        return {"kind": self.kind}

    @property
    def superlinear(self) -> bool:
        """Whether the energy blows up as a cell area vanishes (barrier property)."""
        if self.kind == "power":
            return self.m > 1.0
        if self.kind == "custom":
            return self.custom_superlinear
        return True

    def density(self, r):
        """U(r), U'(r), U''(r) elementwise (inf where U is infinite)."""
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            if self.kind == "entropy":
                lr = np.log(r)
                return r * lr, lr + 1.0, 1.0 / r
            if self.kind == "power":
                m = self.m
                return r**m / (m - 1.0), m / (m - 1.0) * r ** (m - 1.0), m * r ** (m - 2.0)
            if self.kind == "congestion":
                a, b = self.alpha, self.beta
                s = np.sqrt(r)
                bad = r >= 1.0
                s = np.where(bad, 0.5, s)
                rr = np.where(bad, 0.25, r)
                L = -np.log1p(-s)
                g = 2.0 * (s - rr)
                L1 = 1.0 / g
                L2 = -(1.0 / s - 2.0) / g**2
                u = rr**a * L
                u1 = a * rr ** (a - 1.0) * L + rr**a * L1
                u2 = a * (a - 1.0) * rr ** (a - 2.0) * L + 2.0 * a * rr ** (a - 1.0) * L1 + rr**a * L2
                inf = np.where(bad, np.inf, 0.0)
                return b * u + inf, b * u1 + inf, b * u2 + inf
            return self.U(r), self.dU(r), self.d2U(r)

    def cell_terms(self, mu, A):
        """h(A) = A U(mu / A) with h'(A), h''(A); entropy drops mu log mu."""
        mu = np.asarray(mu, dtype=float)
        A = np.asarray(A, dtype=float)
        if self.kind == "entropy":
            with np.errstate(divide="ignore"):
                return -mu * np.log(A), -mu / A, mu / A**2
        r = mu / A
        u, u1, u2 = self.density(r)
        with np.errstate(invalid="ignore"):
            return A * u, u - r * u1, r * r * u2 / A


@dataclass(frozen=True)
class GaussianBump:
    amplitude: float
    center: tuple = (0.0, 0.0)
    rate: float = 1.0  # amplitude * exp(-rate |x - center|^2)


@dataclass(frozen=True)
class PotentialSpec:
    """V(x) = quad_coef |x - quad_center|^2 + sum of Gaussian bumps.

    ``interaction`` is the coefficient c of W(x, y) = c |x - y|^2 (0 disables it).
    Convexity is not enforced; ``semi_convex`` is recorded as metadata only.
    """

    quad_coef: float = 0.0
    quad_center: tuple = (0.0, 0.0)
    bumps: tuple = ()
    interaction: float = 0.0
    semi_convex: bool = True

    @classmethod
    def crowd(cls) -> "PotentialSpec":
        return cls(1.0, (2.0, 0.0), (GaussianBump(5.0, (0.0, 0.0), 2.5),))

    @classmethod
    def zero(cls) -> "PotentialSpec":
        return cls()

    @classmethod
    def from_dict(cls, d: dict) -> "PotentialSpec":
        d = dict(d)
        if d.get("kind") == "crowd":
            return cls.crowd()
        if d.get("kind") == "zero":
            return cls()
        d.pop("kind", None)
        extra = set(d) - {"quad_coef", "quad_center", "bumps", "interaction"}
        if extra:
            raise ValueError(f"unknown keys for potential: {sorted(extra)}")
        bumps = tuple(
            GaussianBump(float(b["amplitude"]), tuple(b.get("center", (0.0, 0.0))), float(b.get("rate", 1.0)))
            for b in d.get("bumps", [])
        )
        return cls(
            float(d.get("quad_coef", 0.0)),
            tuple(d.get("quad_center", (0.0, 0.0))),
            bumps,
            float(d.get("interaction", 0.0)),
        )

    def to_dict(self) -> dict:
        return {
            "quad_coef": self.quad_coef,
            "quad_center": list(self.quad_center),
            "bumps": [{"amplitude": b.amplitude, "center": list(b.center), "rate": b.rate} for b in self.bumps],
            "interaction": self.interaction,
        }

    @property
    def has_field(self) -> bool:
        return self.quad_coef != 0.0 or len(self.bumps) > 0

    def field(self, x):
        """V, grad V, Hess V at points x of shape (n, 2)."""
        x = np.asarray(x, dtype=float).reshape(-1, 2)
        n = len(x)
        d = x - np.asarray(self.quad_center, dtype=float)
        v = self.quad_coef * (d * d).sum(1)
        g = 2.0 * self.quad_coef * d
        h = np.broadcast_to(2.0 * self.quad_coef * np.eye(2), (n, 2, 2)).copy()
        for b in self.bumps:
            e = x - np.asarray(b.center, dtype=float)
            ex = b.amplitude * np.exp(-b.rate * (e * e).sum(1))
            v = v + ex
            g = g - 2.0 * b.rate * e * ex[:, None]
            h = h + ex[:, None, None] * (4.0 * b.rate**2 * e[:, :, None] * e[:, None, :] - 2.0 * b.rate * np.eye(2))
        return v, g, h

    def __call__(self, x):
        return self.field(x)[0]


def potential_energy(nu: DiscreteMeasure, spec: PotentialSpec) -> float:
    val = float((nu.masses * spec(nu.sites)).sum()) if spec.has_field else 0.0
    if spec.interaction:
        x = nu.sites
        d2 = ((x[:, None, :] - x[None, :, :]) ** 2).sum(-1)
        val += float(spec.interaction * nu.masses @ d2 @ nu.masses)
    return val


def internal_energy(mu: DiscreteMeasure, phi, Y: ConvexDomain, U: InternalEnergySpec, diagram=None) -> float:
    d = diagram if diagram is not None else build_diagram(mu.sites, phi, Y)
    A = d.areas
    empty = A <= d.empty_tolerance()
    if U.superlinear and np.any(empty):
        return math.inf
    keep = ~empty
    h, _, _ = U.cell_terms(mu.masses[keep], A[keep])
    return float(h.sum())


@dataclass
class McCannReport:
    monotone: bool
    convex: bool
    max_increase: float
    max_midpoint_gap: float

    @property
    def ok(self) -> bool:
        return self.monotone and self.convex


def mccann_check(U: InternalEnergySpec, grid=None, tol: float = 1e-10) -> McCannReport:
    """Test that g(r) = r^2 U(r^-2) is convex and non-increasing on a grid."""
    if grid is None:
        grid = np.logspace(-2, 2, 401)
    r = np.asarray(grid, dtype=float)
    if U.kind == "congestion":
        r = r[r > 1.0 + 1e-9]
    g = r**2 * U.density(r**-2.0)[0]
    scale = max(1.0, float(np.abs(g).max()))
    inc = float(np.max(np.diff(g), initial=-np.inf))
    rm = 0.5 * (r[:-1] + r[1:])
    gm = rm**2 * U.density(rm**-2.0)[0]
    gap = float(np.max(gm - 0.5 * (g[:-1] + g[1:]), initial=-np.inf))
    return McCannReport(inc <= tol * scale, gap <= tol * scale, inc, gap)


# -- JKO objective ------------------------------------------------------------------


@dataclass
class ObjectiveValue:
    value: float
    terms: dict
    grad: Optional[np.ndarray] = None
    hess: Optional[sp.csr_matrix] = None
    diagram: Optional[LaguerreDiagram] = None
    selection: Optional[np.ndarray] = None


@dataclass
class JkoObjective:
    """phi -> W^2(mu, push(mu)) / 2 tau + E(push(mu)) + U(ac push(mu)).

    ``mode="ac"`` measures transport and potential through the cells;
    ``mode="selection"`` through one selected point per cell (Steiner point
    or centroid), differentiated exactly in phi.
    """

    mu: DiscreteMeasure
    tau: float
    domain: ConvexDomain
    internal: Optional[InternalEnergySpec] = None
    potential: Optional[PotentialSpec] = None
    mode: str = "ac"
    selection: str = "steiner"
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.mode not in ("ac", "selection"):
            raise ValueError(f"unknown objective mode {self.mode!r}")
        if self.selection not in ("steiner", "centroid"):
            raise ValueError(f"unknown selection {self.selection!r}")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        pot = self.potential
        if pot is not None and pot.interaction and self.mode != "selection":
            raise ValueError("interaction energy is only supported in selection mode")

    @property
    def n(self) -> int:
        return len(self.mu)

    @property
    def w_coef(self) -> float:
        return 0.0 if math.isinf(self.tau) else 0.5 / self.tau

    def _prims(self):
        pr = {"A"}
        w = self.w_coef > 0
        pot = self.potential
        field_on = pot is not None and pot.has_field
        inter = pot is not None and pot.interaction != 0.0
        if self.mode == "ac":
            if w:
                pr.add("Q")
            if field_on:
                pr.add("IV")
        elif w or field_on or inter:
            pr.update(("Sx", "Sy") if self.selection == "steiner" else ("Mx", "My"))
        return pr

    def evaluate(self, phi, order: int = 0, diagram: Optional[LaguerreDiagram] = None) -> ObjectiveValue:
        """Value, and with ``order`` 1 or 2 also gradient and Hessian.

        ``diagram`` may pass a prebuilt diagram of (sites, phi) to share
        between objectives on the same sites.
        """
        phi = np.asarray(phi, dtype=float)
        mu = self.mu.masses
        P = self.mu.sites
        d = build_diagram(P, phi, self.domain) if diagram is None else diagram
        if not d.is_interior():
            return ObjectiveValue(math.inf, {}, diagram=d)
        pot = self.potential
        field_fn = pot.field if pot is not None and pot.has_field else None
        prims = self._prims()
        cc = CellCalculus(d, prims, field_fn)
        n = self.n
        K = len(PRIM_ORDER)
        var = {}
        for i, k in enumerate(PRIM_ORDER):
            if k in cc.values:
                var[k] = Jet.variable(cc.values[k], i, K)
        A = var["A"]
        total = Jet.constant(0.0, n, K)
        terms = {}
        if self.internal is not None:
            h, h1, h2 = self.internal.cell_terms(mu, A.val)
            if not np.all(np.isfinite(h)):
                return ObjectiveValue(math.inf, {}, diagram=d)
            t = A.apply(h, h1, h2)
            terms["U"] = float(h.sum())
            total = total + t
        wc = self.w_coef
        G = None
        if self.mode == "ac":
            if wc > 0:
                t = var["Q"] / A * (wc * mu)
                terms["W"] = float(t.val.sum()) / wc
                total = total + t
            if field_fn is not None:
                t = var["IV"] / A * mu
                terms["E"] = float(t.val.sum())
                total = total + t
        elif "Sx" in var or "Mx" in var:
            if self.selection == "steiner":
                sx, sy = var["Sx"], var["Sy"]
            else:
                inv = A.reciprocal()
                sx, sy = var["Mx"] * inv, var["My"] * inv
            gx, gy = sx + P[:, 0], sy + P[:, 1]
            G = np.column_stack([gx.val, gy.val])
            if wc > 0:
                t = (sx.square() + sy.square()) * (wc * mu)
                terms["W"] = float(t.val.sum()) / wc
                total = total + t
            e_val = 0.0
            if field_fn is not None:
                v, gv, hv = field_fn(G)
                t = compose_field(v, gv, hv, gx, gy) * mu
                e_val += float(t.val.sum())
                total = total + t
            c = pot.interaction if pot is not None else 0.0
            if c:
                mbar = mu @ G
                e_val += float(2.0 * c * (mu @ (G * G).sum(1) - mbar @ mbar))
                t = (gx.square() + gy.square()) * (2.0 * c * mu) - (gx * mbar[0] + gy * mbar[1]) * (4.0 * c * mu)
                total = total + t
            if field_fn is not None or c:
                terms["E"] = e_val
        terms = {k: float(v) for k, v in terms.items()}
        value = terms.get("U", 0.0) + wc * terms.get("W", 0.0) + terms.get("E", 0.0)
        out = ObjectiveValue(value, terms, diagram=d, selection=G)
        if order == 0:
            return out
        keys = [k for k in PRIM_ORDER if k in var]
        idx = {k: PRIM_ORDER.index(k) for k in keys}
        fk = {k: total.grad[:, idx[k]] for k in keys}
        out.grad = cc.gradient(fk)
        # the global interaction gradient is folded into the local terms above
        c = pot.interaction if pot is not None else 0.0
        if order >= 2:
            fkl = {}
            for k in keys:
                for l in keys:
                    v = total.hess[:, idx[k], idx[l]]
                    if np.any(v != 0.0):
                        fkl[(k, l)] = v
            H = cc.hessian(fk, fkl)
            if c:
                gxm, gym = self._selection_jacobians(cc, var, A)
                H = H - 4.0 * c * (sp.csr_matrix(gxm).T @ sp.csr_matrix(gxm) + sp.csr_matrix(gym).T @ sp.csr_matrix(gym))
            out.hess = sp.csr_matrix(0.5 * (H + H.T))
        return out

    def _selection_jacobians(self, cc, var, A):
        """Rows sum_p mu_p dG_p / dphi for both coordinates."""
        mu = self.mu.masses
        if self.selection == "steiner":
            M = cc.prim_matrix(["Sx", "Sy"])
            n = self.n
            return (mu @ M[:n]).reshape(1, -1), (mu @ M[n:]).reshape(1, -1)
        n = self.n
        M = cc.prim_matrix(["A", "Mx", "My"])
        a = A.val
        mx, my = var["Mx"].val, var["My"].val
        wA = mu * (-1.0 / a**2)
        rx = (mu / a) @ M[n : 2 * n] + (wA * mx) @ M[:n]
        ry = (mu / a) @ M[2 * n :] + (wA * my) @ M[:n]
        return np.asarray(rx).reshape(1, -1), np.asarray(ry).reshape(1, -1)

    def __call__(self, phi) -> float:
        return self.evaluate(phi, 0).value


def jko_objective(phi, mu: DiscreteMeasure, tau: float, Y: ConvexDomain, specs: dict, mode: str = "ac") -> dict:
    """Functional form of :class:`JkoObjective`; ``specs`` holds internal/potential/selection."""
    obj = JkoObjective(
        mu,
        tau,
        Y,
        internal=specs.get("internal"),
        potential=specs.get("potential"),
        mode=mode,
        selection=specs.get("selection", "steiner"),
    )
    r = obj.evaluate(phi, 2)
    return {"value": r.value, "gradient": r.grad, "hessian": r.hess, "terms": r.terms}


# -- nonconvexity example ----------------------------------------------------------


@dataclass
class NonconvexityDemo:
    t: np.ndarray
    values: np.ndarray
    violations: list  # (t_left, t_mid, t_right, gap) with gap > 0
    cells_t0: list
    cells_t1: list

    @property
    def found(self) -> bool:
        return len(self.violations) > 0


def nonconvexity_demo(n_t: int = 201, tol: float = 1e-12) -> NonconvexityDemo:
    """Second moment of the ac pushforward along a segment in phi.

    Three sites q = (2, 0), p+ = (0, 1), p- = (0, -1) with masses 0.8, 0.1, 0.1
    in Y = [-1, 1]^2; phi_t equals 1 - t at q and 0 at p+-.
    """
    Y = ConvexDomain.square(2.0)
    P = np.array([[2.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    mu = np.array([0.8, 0.1, 0.1])
    ts = np.linspace(0.0, 1.0, n_t)
    vals = np.empty(n_t)
    cells = {}
    for i, t in enumerate(ts):
        d = build_diagram(P, np.array([1.0 - t, 0.0, 0.0]), Y)
        if i in (0, n_t - 1):
            cells[i] = [c.vertices.copy() for c in d.cells]
        vals[i] = sum(
            m / a * second_moment(c, (0.0, 0.0)) for m, a, c in zip(mu, d.areas, d.cells) if a > 0
        )
    viol = []
    for i in range(1, n_t - 1):
        for s in range(1, min(i, n_t - 1 - i) + 1, max(1, n_t // 50)):
            gap = vals[i] - 0.5 * (vals[i - s] + vals[i + s])
            if gap > tol:
                viol.append((float(ts[i - s]), float(ts[i]), float(ts[i + s]), float(gap)))
    return NonconvexityDemo(ts, vals, viol, cells[0], cells[n_t - 1])
