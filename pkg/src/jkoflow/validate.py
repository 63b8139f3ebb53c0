"""Independent oracles: Monte-Carlo cell areas, finite differences, convexity along segments."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .energy import (
    DiscreteMeasure,
    GradientSelection,
    InternalEnergySpec,
    JkoObjective,
    internal_energy,
    nonconvexity_demo,
)
from .geom2d import ConvexDomain
from .laguerre import build_diagram
from .ma import NotInteriorError, ma, ma_hessian, ma_jacobian, segment_logconcavity_check

SUITES = ("mc", "fd", "convexity", "all")


@dataclass
class OracleReport:
    name: str
    instance: dict
    max_deviation: float
    tolerance: float
    samples: int
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.max_deviation <= self.tolerance)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "instance": self.instance,
            "max_deviation": self.max_deviation,
            "tolerance": self.tolerance,
            "samples": self.samples,
            "passed": self.passed,
            "details": self.details,
        }


# -- random instances ------------------------------------------------------------


def random_instance(rng, n: int, Y: ConvexDomain, noise: float = 0.05, margin: float = 0.9):
    """Sites uniform in a shrunk copy of Y and a perturbed Voronoi potential.

    The perturbation is halved until every cell is nonempty.
    """
    c = Y.vertices.mean(0)
    lo, hi = Y.vertices.min(0), Y.vertices.max(0)
    pts = []
    while len(pts) < n:
        cand = rng.uniform(lo, hi, size=(4 * n, 2))
        cand = c + margin * (cand - c)
        cand = cand[Y.contains(cand, tol=-1e-6)]
        pts.extend(cand.tolist())
    P = np.array(pts[:n])
    base = 0.5 * (P**2).sum(1)
    dphi = rng.normal(size=n)
    for _ in range(40):
        phi = base + noise * dphi
        if build_diagram(P, phi, Y).is_interior():
            return P, phi
        noise *= 0.5
    return P, base


def jittered_grid(rng, n: int, Y: ConvexDomain, jitter: float = 0.25):
    """About n well-separated sites: a square lattice over Y's box with small jitter."""
    lo, hi = Y.vertices.min(0), Y.vertices.max(0)
    k = max(1, int(math.ceil(math.sqrt(n))))
    h = (hi - lo) / k
    ix, iy = np.meshgrid(np.arange(k), np.arange(k))
    P = lo + (np.column_stack([ix.ravel(), iy.ravel()]) + 0.5 + rng.uniform(-jitter, jitter, (k * k, 2))) * h
    P = P[Y.contains(P, tol=-1e-6)]
    return P[:n]


# -- Monte Carlo ---------------------------------------------------------------------


def _inside(pts, vertices):
    # counter-clockwise polygon: every edge cross product non-negative
    v = vertices
    e = np.roll(v, -1, axis=0) - v
    cr = e[None, :, 0] * (pts[:, None, 1] - v[None, :, 1]) - e[None, :, 1] * (pts[:, None, 0] - v[None, :, 0])
    return np.all(cr >= 0.0, axis=1)


def _shoelace(v):
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def mc_area_oracle(P, phi, Y: ConvexDomain, n_samples: int = 100_000, seed: int = 0):
    """Cell areas from uniform samples of Y assigned to argmax_p <y, p> - phi(p).

    Returns (estimates, standard errors).  Ties go to the lowest site id.
    Nothing from the diagram construction is used.
    """
    if n_samples < 10_000:
        raise ValueError("n_samples must be at least 1e4")
    P = np.asarray(P, dtype=float)
    phi = np.asarray(phi, dtype=float)
    rng = np.random.default_rng(seed)
    lo, hi = Y.vertices.min(0), Y.vertices.max(0)
    counts = np.zeros(len(P), dtype=np.int64)
    got = 0
    while got < n_samples:
        y = rng.uniform(lo, hi, size=(min(2 * (n_samples - got), 200_000), 2))
        y = y[_inside(y, Y.vertices)][: n_samples - got]
        for chunk in np.array_split(y, max(1, len(y) * len(P) // 2_000_000 + 1)):
            score = chunk @ P.T - phi[None, :]
            counts += np.bincount(np.argmax(score, axis=1), minlength=len(P))
        got += len(y)
    area = _shoelace(Y.vertices)
    f = counts / n_samples
    return area * f, area * np.sqrt(f * (1.0 - f) / n_samples)


def mc_area_report(P, phi, Y: ConvexDomain, n_samples: int = 100_000, seed: int = 0, k_sigma: float = 4.0) -> OracleReport:
    """Deviation of ma() from the Monte-Carlo oracle, in standard errors."""
    est, se = mc_area_oracle(P, phi, Y, n_samples, seed)
    exact = ma(P, phi, Y)
    # a cell with no samples has se = 0; one sample's worth of area is the resolution
    floor = _shoelace(Y.vertices) / n_samples
    z = np.abs(est - exact) / np.maximum(se, floor)
    return OracleReport(
        "mc_area",
        {"n_sites": len(P), "seed": seed},
        float(z.max()),
        k_sigma,
        n_samples,
        {"max_abs_error": float(np.abs(est - exact).max())},
    )


# -- finite differences -----------------------------------------------------------


def fd_steps(phi) -> tuple[float, float]:
    s = 1.0 + float(np.abs(phi).max())
    return 1e-6 * s, 1e-4 * s


def fd_check(target, phi, order: int = 1, h=None, P=None, Y=None, name=None, tol=None) -> OracleReport:
    """Central differences against the analytic derivative.

    ``target`` is "ma" (order 1 checks the Jacobian, order 2 the Hessian
    tensor through differences of the Jacobian; needs P and Y) or an object
    with ``evaluate(phi, order)`` (order 1 checks the gradient against the
    value, order 2 the Hessian against the gradient).  The default tolerance
    is 1e-5 for first and 1e-4 for second derivatives.  For the ma Hessian,
    ``details["stencil_stable"]`` is False (and the deviation NaN) when some
    stencil point changes the dual triangulation, where the difference
    quotient is not an oracle.
    """
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    phi = np.asarray(phi, dtype=float)
    n = len(phi)
    if tol is None:
        tol = 1e-5 if order == 1 else 1e-4
    if h is None:
        h = fd_steps(phi)[order - 1]
    stable = True
    if isinstance(target, str):
        if target != "ma":
            raise ValueError(f"unknown operator {target!r}")
        d = build_diagram(P, phi, Y)
        if not d.is_interior():
            raise NotInteriorError("fd_check needs an interior potential")
        if order == 1:
            exact = ma_jacobian(P, phi, Y, diagram=d).toarray()
            approx = np.empty((n, n))
            for k in range(n):
                e = np.zeros(n)
                e[k] = h
                approx[:, k] = (ma(P, phi + e, Y) - ma(P, phi - e, Y)) / (2 * h)
        else:
            exact = ma_hessian(P, phi, Y, diagram=d).to_dense()
            approx = np.empty((n, n, n))
            ref = d.dual.triangles
            for k in range(n):
                e = np.zeros(n)
                e[k] = h
                dp, dm = build_diagram(P, phi + e, Y), build_diagram(P, phi - e, Y)
                # a difference quotient across a flip of the dual measures the jump
                if dp.dual.triangles != ref or dm.dual.triangles != ref:
                    stable = False
                    break
                approx[:, :, k] = (
                    ma_jacobian(P, phi + e, Y, diagram=dp).toarray() - ma_jacobian(P, phi - e, Y, diagram=dm).toarray()
                ) / (2 * h)
        label = name or f"ma_order{order}"
    else:
        base = target.evaluate(phi, order)
        if not math.isfinite(base.value):
            raise NotInteriorError("fd_check needs an interior potential")
        if order == 1:
            exact = base.grad
            approx = np.empty(n)
            for k in range(n):
                e = np.zeros(n)
                e[k] = h
                approx[k] = (target.evaluate(phi + e, 0).value - target.evaluate(phi - e, 0).value) / (2 * h)
        else:
            exact = base.hess.toarray()
            approx = np.empty((n, n))
            for k in range(n):
                e = np.zeros(n)
                e[k] = h
                approx[:, k] = (target.evaluate(phi + e, 1).grad - target.evaluate(phi - e, 1).grad) / (2 * h)
        label = name or f"objective_order{order}"
    if not stable:
        dev = math.nan
    else:
        dev = float(np.abs(exact - approx).max()) if exact.size else 0.0
    details = {"scale": float(np.abs(exact).max())}
    if isinstance(target, str) and order == 2:
        details["stencil_stable"] = stable
    return OracleReport(label, {"n_sites": n, "h": h}, dev, tol, 2 * n, details)


# -- convexity along segments ------------------------------------------------------


def _segment_pairs(rng, n_instances, Y):
    for i in range(n_instances):
        n = int(rng.integers(3, 30))
        P, phi0 = random_instance(rng, n, Y, noise=0.1)
        phi1 = 0.5 * (P**2).sum(1) + 0.1 * rng.normal(size=n)
        if not build_diagram(P, phi1, Y).is_interior():
            phi1 = 0.5 * (P**2).sum(1)
        yield i, P, phi0, phi1


def convexity_suite(seed: int = 0, n_instances: int = 100, t_samples=None) -> list:
    """Log-concavity of cell areas, convexity of the internal-energy term and
    feasibility of interpolated (phi, selection) pairs along random segments,
    plus the nonconvexity example, which must show a violation."""
    Y = ConvexDomain.square(2.0)
    ts = np.linspace(0.1, 0.9, 9) if t_samples is None else np.asarray(t_samples)
    reports = []

    rng = np.random.default_rng(seed)
    worst, viol, checks = 0.0, 0, 0
    for _, P, phi0, phi1 in _segment_pairs(rng, n_instances, Y):
        r = segment_logconcavity_check(P, phi0, phi1, Y, ts)
        worst, viol, checks = max(worst, r.max_violation), viol + r.violations, checks + r.n_checks
    reports.append(OracleReport("log_concavity", {"seed": seed, "segments": n_instances}, worst, 1e-9, checks, {"violations": viol}))

    specs = {
        "entropy": InternalEnergySpec("entropy"),
        "power_m2": InternalEnergySpec("power", m=2.0),
        "congestion": InternalEnergySpec("congestion", alpha=1.0, beta=0.01),
    }
    for label, U in specs.items():
        rng = np.random.default_rng(seed)
        worst, viol, checks = -math.inf, 0, 0
        for _, P, phi0, phi1 in _segment_pairs(rng, n_instances, Y):
            if label == "congestion":
                # masses follow each site's smallest cell along the segment, keeping densities below one
                amin = np.min([ma(P, (1 - t) * phi0 + t * phi1, Y) for t in np.concatenate([[0.0, 1.0], ts])], axis=0)
                mu = DiscreteMeasure.normalized(P, amin)
            else:
                mu = DiscreteMeasure.uniform(P)
            u0 = internal_energy(mu, phi0, Y, U)
            u1 = internal_energy(mu, phi1, Y, U)
            for t in ts:
                ut = internal_energy(mu, (1 - t) * phi0 + t * phi1, Y, U)
                gap = (ut - ((1 - t) * u0 + t * u1)) / (1.0 + abs(u0) + abs(u1))
                worst = max(worst, gap)
                viol += gap > 1e-9
                checks += 1
        reports.append(OracleReport(f"u_term_convexity_{label}", {"seed": seed, "segments": n_instances}, max(worst, 0.0), 1e-9, checks, {"violations": int(viol)}))

    rng = np.random.default_rng(seed)
    worst, checks = 0.0, 0
    for i, P, phi0, phi1 in _segment_pairs(rng, n_instances, Y):
        kind0, kind1 = ("steiner", "centroid") if i % 2 else ("centroid", "steiner")
        G0 = GradientSelection.of(build_diagram(P, phi0, Y), kind0).points
        G1 = GradientSelection.of(build_diagram(P, phi1, Y), kind1).points
        for t in ts:
            Gt = GradientSelection((1 - t) * G0 + t * G1)
            worst = max(worst, Gt.violation(P, (1 - t) * phi0 + t * phi1, Y))
            checks += 1
    reports.append(OracleReport("joint_feasibility", {"seed": seed, "segments": n_instances}, worst, 1e-9, checks))

    demo = nonconvexity_demo()
    gap = max((v[3] for v in demo.violations), default=0.0)
    reports.append(
        OracleReport(
            "nonconvexity_detected",
            {"sites": [[2, 0], [0, 1], [0, -1]], "masses": [0.8, 0.1, 0.1]},
            0.0 if demo.found else math.inf,
            0.0,
            len(demo.t),
            {"violations": len(demo.violations), "largest_gap": gap},
        )
    )
    return reports


# -- suites ------------------------------------------------------------------------


def mc_suite(seed: int = 0, n_instances: int = 5, n_samples: int = 100_000) -> list:
    Y = ConvexDomain.square(2.0)
    rng = np.random.default_rng(seed)
    out = [mc_area_report(np.array([[0.1, -0.2]]), np.zeros(1), Y, 10_000, seed)]
    for i in range(n_instances):
        P, phi = random_instance(rng, int(rng.integers(2, 30)), Y)
        out.append(mc_area_report(P, phi, Y, n_samples, seed + i))
    return out


def fd_suite(seed: int = 0) -> list:
    Y = ConvexDomain.square(2.0)
    rng = np.random.default_rng(seed)
    out = []
    P = np.array([[-0.3, 0.1], [0.4, -0.2]])
    phi = 0.5 * (P**2).sum(1) + np.array([0.02, -0.01])
    out.append(fd_check("ma", phi, 1, P=P, Y=Y, name="ma_jacobian_2"))
    P = jittered_grid(rng, 10, Y)
    phi = 0.5 * (P**2).sum(1) + 0.01 * rng.normal(size=len(P))
    out.append(fd_check("ma", phi, 2, P=P, Y=Y, name="ma_hessian_10"))
    Y4 = ConvexDomain.square(4.0)
    P = jittered_grid(rng, 50, Y4)
    phi = 0.5 * (P**2).sum(1) + 0.01 * rng.normal(size=len(P))
    mu = DiscreteMeasure.uniform(P)
    for label, U in (
        ("entropy", InternalEnergySpec("entropy")),
        ("power_m2", InternalEnergySpec("power", m=2.0)),
        ("congestion", InternalEnergySpec("congestion", alpha=1.0, beta=0.01)),
    ):
        obj = JkoObjective(mu, 0.1, Y4, U, None, "ac")
        out.append(fd_check(obj, phi, 1, name=f"jko_gradient_{label}"))
    return out


def run_suite(suite: str = "all", seed: int = 0) -> list:
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}; choose from {SUITES}")
    out = []
    if suite in ("mc", "all"):
        out += mc_suite(seed)
    if suite in ("fd", "all"):
        out += fd_suite(seed)
    if suite in ("convexity", "all"):
        out += convexity_suite(seed, 100 if suite == "convexity" else 30)
    return out
