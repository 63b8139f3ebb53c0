"""Time loops: nonlinear diffusion of point clouds and congested crowd motion on a grid."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import io as jio
from .energy import (
    DiscreteMeasure,
    GradientSelection,
    InternalEnergySpec,
    JkoObjective,
    PotentialSpec,
    internal_energy,
)
from .geom2d import ConvexDomain
from .laguerre import build_diagram
from .raster import Grid, rasterize
from .solver import SolveOptions, fixed_point_outer, initial_potential, newton_solve

logger = logging.getLogger(__name__)

GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))


@dataclass
class FlowConfig:
    domain: ConvexDomain = field(default_factory=lambda: ConvexDomain.square(4.0))
    tau: float = 0.01
    steps: int = 10
    internal: InternalEnergySpec = field(default_factory=InternalEnergySpec)
    potential: Optional[PotentialSpec] = None
    mode: Optional[str] = None  # None: "selection" for diffusion, "ac" for crowd
    selection: str = "centroid"
    seed: int = 0
    n_points: int = 100
    init: str = "uniform"  # uniform | blob | barenblatt | crowd | file
    init_radius: float = 0.8
    grid_n: int = 40
    floor: float = 1e-6  # background density of the crowd grid
    points: Optional[np.ndarray] = None
    masses: Optional[np.ndarray] = None
    solver: SolveOptions = field(default_factory=SolveOptions)
    snapshot_every: int = 0

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.steps < 1:
            raise ValueError("steps must be at least 1")
        if self.mode not in (None, "ac", "selection"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.selection not in ("steiner", "centroid"):
            raise ValueError(f"unknown selection {self.selection!r}")


@dataclass
class StepRecord:
    k: int
    time: float
    points: np.ndarray
    masses: np.ndarray
    energies: dict
    solver: dict
    grid_density: Optional[np.ndarray] = None

    def to_dict(self) -> dict:
        d = {"k": self.k, "time": self.time, "energies": self.energies, "solver": self.solver}
        if self.grid_density is not None:
            d["grid_max_density"] = float(self.grid_density.max())
        return d


@dataclass
class FlowTrace:
    kind: str
    config: dict
    records: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    truncated: bool = False
    diagnostic: str = ""
    grid: Optional[Grid] = None
    _diagrams: dict = field(default_factory=dict, repr=False)

    def series(self, key: str) -> np.ndarray:
        return np.array([r.energies[key] for r in self.records])

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "config": self.config,
            "warnings": self.warnings,
            "truncated": self.truncated,
            "diagnostic": self.diagnostic,
            "steps": [r.to_dict() for r in self.records],
        }


# -- initial data -----------------------------------------------------------------


def sunflower(n: int, radius: float, profile: str = "uniform") -> np.ndarray:
    """Deterministic quasi-uniform points on a disc with equal-mass spacing.

    ``profile="barenblatt"`` places point i at the radius enclosing mass
    fraction (i + 1/2) / n of a density proportional to (1 - r^2 / R^2)_+.
    """
    u = (np.arange(n) + 0.5) / n
    if profile == "uniform":
        r = radius * np.sqrt(u)
    elif profile == "barenblatt":
        r = radius * np.sqrt(1.0 - np.sqrt(1.0 - u))
    else:
        raise ValueError(f"unknown profile {profile!r}")
    a = GOLDEN_ANGLE * np.arange(n)
    return np.column_stack([r * np.cos(a), r * np.sin(a)])


def initial_sites(cfg: FlowConfig) -> tuple[np.ndarray, np.ndarray]:
    if cfg.init == "file" or cfg.points is not None:
        P = np.asarray(cfg.points, dtype=float)
        m = np.full(len(P), 1.0 / len(P)) if cfg.masses is None else np.asarray(cfg.masses, dtype=float)
        return P, m / m.sum()
    n = cfg.n_points
    rng = np.random.default_rng(cfg.seed)
    Y = cfg.domain
    if cfg.init == "uniform":
        lo, hi = Y.vertices.min(0), Y.vertices.max(0)
        pts = []
        while len(pts) < n:
            c = rng.uniform(lo, hi, size=(2 * n, 2))
            c = c[Y.contains(c, tol=-1e-9)]
            pts.extend(c.tolist())
        P = np.array(pts[:n])
    elif cfg.init in ("blob", "barenblatt"):
        prof = "uniform" if cfg.init == "blob" else "barenblatt"
        P = sunflower(n, cfg.init_radius, prof)
        P = P + rng.uniform(-1e-9, 1e-9, P.shape)  # break exact symmetries
    else:
        raise ValueError(f"unknown init {cfg.init!r}")
    return P, np.full(n, 1.0 / n)


# -- diffusion ----------------------------------------------------------------------


def _solve_step(obj: JkoObjective, phi0, opts: SolveOptions):
    if obj.mode == "selection":
        phi, G, orep = fixed_point_outer(obj, phi0, opts)
        rep = orep.inner[-1]
        info = rep.to_dict()
        info["outer_rounds"] = orep.rounds
        info["iterations"] = sum(r.iterations for r in orep.inner)
        return phi, rep, info
    phi, rep = newton_solve(obj, phi0, opts)
    return phi, rep, rep.to_dict()


def diffusion_flow(cfg: FlowConfig, out_dir=None, on_step=None) -> FlowTrace:
    """Lagrangian JKO steps: solve for phi, move each site to its selected point.

    ``on_step(record)`` is called after every completed step.
    """
    Y = cfg.domain
    U = cfg.internal
    cfg = replace(cfg, mode=cfg.mode or "selection")
    trace = FlowTrace("diffusion", _config_dict(cfg))
    if U.kind == "power" and U.m < 1.0:
        trace.warnings.append(f"m = {U.m} < 1: fast diffusion, outside the range covered by the convergence theory")
    if U.kind == "power" and U.m < 0.5:
        raise ValueError("m must be at least 1 - 1/d = 0.5")
    P, m = initial_sites(cfg)
    if not np.all(Y.contains(P, tol=1e-12)):
        raise ValueError("initial points must lie in the domain")
    mu = DiscreteMeasure(P, m)
    phi = initial_potential(P, Y)
    d0 = build_diagram(P, phi, Y)
    trace.records.append(
        StepRecord(0, 0.0, P.copy(), m.copy(), {"U": internal_energy(mu, phi, Y, U, d0)}, {})
    )
    trace._diagrams[0] = d0
    for k in range(1, cfg.steps + 1):
        obj = JkoObjective(mu, cfg.tau, Y, U, cfg.potential, cfg.mode, cfg.selection)
        try:
            phi = initial_potential(mu.sites, Y)
            phi, rep, info = _solve_step(obj, phi, cfg.solver)
        except (ValueError, np.linalg.LinAlgError) as exc:
            trace.truncated = True
            trace.diagnostic = f"step {k}: {exc}"
            logger.warning("diffusion flow stopped at step %d: %s", k, exc)
            break
        if not rep.converged:
            trace.warnings.append(f"step {k}: solver ended with {rep.reason} (|g| = {rep.grad_norm:.2e})")
        ev = obj.evaluate(phi, 0)
        d = ev.diagram
        G = GradientSelection.of(d, cfg.selection).points
        energies = dict(ev.terms)
        energies["objective"] = ev.value
        if "W" in energies:
            energies["W_over_2tau"] = energies.pop("W") * obj.w_coef
        mu = DiscreteMeasure(G, mu.masses)
        rec = StepRecord(k, k * cfg.tau, G.copy(), mu.masses.copy(), energies, info)
        trace.records.append(rec)
        trace._diagrams[k] = d
        if on_step is not None:
            on_step(rec)
        logger.info("step %d value %.6g |g| %.2e iters %d", k, ev.value, rep.grad_norm, rep.iterations)
    if out_dir is not None:
        write_trace(trace, cfg, out_dir)
    return trace


# -- crowd motion ------------------------------------------------------------------


def crowd_initial_density(grid: Grid, floor: float) -> np.ndarray:
    """Density 1/2 on [-2, -1] x [-1, 1] (exact pixel coverage) plus a small floor."""
    from .geom2d import ConvexPolygon

    block = ConvexPolygon.box(-2.0, -1.0, -1.0, 1.0)
    cover = rasterize([block], [1.0], grid) / grid.pixel_area
    return 0.5 * cover + floor


def grid_energy(density, grid: Grid, U: InternalEnergySpec, V: Optional[PotentialSpec]) -> dict:
    """F on the grid: sum of m V(center) plus sum of a u(m / a) over pixels."""
    a = grid.pixel_area
    m = density * a
    e = float((m * V(grid.centers())).sum()) if V is not None and V.has_field else 0.0
    r = m / a
    if U.kind == "entropy":
        u = float((m * np.log(r)).sum())
    else:
        u = float((a * U.density(r)[0]).sum())
    return {"E": e, "U": u, "F": e + u}


def crowd_flow(cfg: FlowConfig, out_dir=None, on_step=None) -> FlowTrace:
    """Eulerian JKO steps on pixel-centre sites with exact rebinning of the ac pushforward.

    ``on_step(record)`` is called after every completed step.
    """
    cfg = replace(cfg, mode=cfg.mode or "ac")
    Y = cfg.domain
    lo, hi = Y.vertices.min(0), Y.vertices.max(0)
    grid = Grid(lo[0], lo[1], hi[0], hi[1], cfg.grid_n, cfg.grid_n)
    if not np.isclose(Y.area, (hi - lo).prod()):
        raise ValueError("crowd flow needs an axis-aligned rectangular domain")
    U, V = cfg.internal, cfg.potential
    P = grid.centers()
    a = grid.pixel_area
    rho = crowd_initial_density(grid, cfg.floor) if cfg.masses is None else np.asarray(cfg.masses) / a
    mass = rho * a
    rho = rho / mass.sum()
    mass = rho * a
    trace = FlowTrace("crowd", _config_dict(cfg), grid=grid)
    if U.kind == "congestion" and rho.max() >= 1.0:
        raise ValueError("initial density reaches 1: congestion energy is infinite")
    en = grid_energy(rho, grid, U, V)
    en["mass"] = float(mass.sum())
    trace.records.append(StepRecord(0, 0.0, P, mass.copy(), en, {}, grid_density=rho.copy()))
    phi0 = initial_potential(P, Y)
    trace._diagrams[0] = build_diagram(P, phi0, Y)
    for k in range(1, cfg.steps + 1):
        mu = DiscreteMeasure(P, mass / mass.sum())
        obj = JkoObjective(mu, cfg.tau, Y, U, V, cfg.mode, cfg.selection)
        try:
            phi, rep, info = _solve_step(obj, phi0, cfg.solver)
        except (ValueError, np.linalg.LinAlgError) as exc:
            trace.truncated = True
            trace.diagnostic = f"step {k}: {exc}"
            logger.warning("crowd flow stopped at step %d: %s", k, exc)
            break
        if not rep.converged:
            trace.warnings.append(f"step {k}: solver ended with {rep.reason} (|g| = {rep.grad_norm:.2e})")
        ev = obj.evaluate(phi, 0)
        d = ev.diagram
        new_mass = rasterize(d.cells, mu.masses / d.areas, grid)
        rho = new_mass / a
        en = grid_energy(rho, grid, U, V)
        en["objective"] = ev.value
        en["W_over_2tau"] = ev.terms.get("W", 0.0) * obj.w_coef
        en["mass"] = float(new_mass.sum())
        rec = StepRecord(k, k * cfg.tau, P, new_mass.copy(), en, info, grid_density=rho.copy())
        trace.records.append(rec)
        trace._diagrams[k] = d
        if on_step is not None:
            on_step(rec)
        mass = new_mass
        logger.info("crowd step %d F %.8g max rho %.6f", k, en["F"], rho.max())
    if out_dir is not None:
        write_trace(trace, cfg, out_dir)
    return trace


# -- output ---------------------------------------------------------------------------


def _config_dict(cfg: FlowConfig) -> dict:
    return {
        "domain": cfg.domain.to_dict(),
        "tau": cfg.tau,
        "steps": cfg.steps,
        "internal": cfg.internal.to_dict(),
        "potential": None if cfg.potential is None else cfg.potential.to_dict(),
        "mode": cfg.mode,
        "selection": cfg.selection,
        "seed": cfg.seed,
        "n_points": cfg.n_points,
        "init": cfg.init,
        "init_radius": cfg.init_radius,
        "grid_n": cfg.grid_n,
        "floor": cfg.floor,
        "solver": cfg.solver.to_dict(),
    }


def write_trace(trace: FlowTrace, cfg: FlowConfig, out_dir) -> list:
    """trace.json, points_k.csv, grid_k.csv (crowd) and snapshot_k.svg; returns written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    p = out / "trace.json"
    jio.write_json(p, trace.to_dict())
    written.append(p)
    every = cfg.snapshot_every
    for rec in trace.records:
        k = rec.k
        p = out / f"points_{k}.csv"
        jio.write_points_csv(p, rec.points, rec.masses)
        written.append(p)
        if rec.grid_density is not None:
            p = out / f"grid_{k}.csv"
            jio.write_grid_csv(p, trace.grid, rec.grid_density)
            written.append(p)
        last = k == trace.records[-1].k
        if k in trace._diagrams and (k == 0 or last or (every and k % every == 0)):
            d = trace._diagrams[k]
            # the diagram of step k carries the masses it pushed forward
            src = trace.records[k - 1].masses if k > 0 else rec.masses
            dens = src / np.where(d.areas > 0, d.areas, np.inf)
            vmax = 1.0 if trace.kind == "crowd" else _diffusion_vmax(trace)
            svg = jio.render_svg(cfg.domain, d.cells, dens, d.points, vmax=vmax)
            p = out / f"snapshot_{k}.svg"
            p.write_text(svg)
            written.append(p)
    return written


def _diffusion_vmax(trace: FlowTrace) -> float:
    """Fixed colour scale: twice the uniform density of the domain."""
    area = ConvexDomain(np.asarray(trace.config["domain"]["vertices"])).area
    return 2.0 / area
