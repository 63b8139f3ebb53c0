"""Damped Newton minimisation of gauge-invariant objectives in phi."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .energy import GradientSelection
from .geom2d import ConvexDomain
from .laguerre import build_diagram
from .ma import NotInteriorError

logger = logging.getLogger(__name__)


class InfeasibleStartError(ValueError):
    pass


@dataclass
class SolveOptions:
    grad_tol: float = 1e-8
    max_iters: int = 100
    shrink: float = 0.5
    armijo: float = 1e-4
    tikhonov_floor: float = 1e-10
    tikhonov_max: float = 1e4
    hessian_mode: str = "analytic"  # or "fd" (central differences of the gradient)
    min_step: float = 1e-16
    stall_iters: int = 5  # stop when neither |g| nor f has improved for this many iterations
    log: Optional[Callable[[str], None]] = None  # receives one JSON line per iteration

    def __post_init__(self):
        if not (0.0 < self.shrink < 1.0):
            raise ValueError("shrink must lie in (0, 1)")
        for k in ("grad_tol", "armijo", "tikhonov_floor", "tikhonov_max", "min_step"):
            if not getattr(self, k) > 0:
                raise ValueError(f"{k} must be positive")
        if self.stall_iters < 1:
            raise ValueError("stall_iters must be positive")
        if self.max_iters < 0:
            raise ValueError("max_iters must be non-negative")
        if self.hessian_mode not in ("analytic", "fd"):
            raise ValueError(f"unknown hessian_mode {self.hessian_mode!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "SolveOptions":
        known = {"grad_tol", "max_iters", "shrink", "armijo", "tikhonov_floor", "tikhonov_max", "hessian_mode", "min_step", "stall_iters"}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown solver keys: {sorted(extra)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("grad_tol", "max_iters", "shrink", "armijo", "tikhonov_floor", "tikhonov_max", "hessian_mode", "min_step", "stall_iters")}


@dataclass
class SolveReport:
    iterations: int = 0
    grad_norm: float = math.inf
    values: list = field(default_factory=list)
    backtracks: list = field(default_factory=list)
    regularization: list = field(default_factory=list)
    descent_fallbacks: int = 0
    reason: str = ""

    @property
    def converged(self) -> bool:
        return self.reason == "converged"

    def monotone(self, rtol: float = 1e-13) -> bool:
        v = np.asarray(self.values)
        return bool(np.all(np.diff(v) <= rtol * (1.0 + np.abs(v[:-1]))))

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "grad_norm": self.grad_norm,
            "values": self.values,
            "backtracks": self.backtracks,
            "regularization": self.regularization,
            "descent_fallbacks": self.descent_fallbacks,
            "reason": self.reason,
        }


def _fd_hessian(objective, phi, h):
    n = len(phi)
    cols = []
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        gp = objective.evaluate(phi + e, 1).grad
        gm = objective.evaluate(phi - e, 1).grad
        if gp is None or gm is None:
            raise NotInteriorError("finite-difference Hessian left the interior")
        cols.append((gp - gm) / (2 * h))
    H = np.array(cols).T
    return sp.csr_matrix(0.5 * (H + H.T))


def _factor_pd(A):
    """Sparse LU with symmetric diagonal pivoting; None unless A is positive definite.

    With diagonal pivots and matching row/column orders the factorisation is
    L D L^T up to scaling, so the signs of diag(U) give the inertia of A.
    """
    try:
        with np.errstate(all="ignore"):
            lu = spla.splu(
                A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0, options=dict(SymmetricMode=True)
            )
    except RuntimeError:
        return None
    u = lu.U.diagonal()
    if not np.array_equal(lu.perm_r, lu.perm_c) or not np.all(np.isfinite(u)) or np.any(u <= 0.0):
        return None
    return lu


def _direction(H, g, opts: SolveOptions, rep: SolveReport):
    """Newton direction on the pinned subspace phi[0] = 0.

    The reduced Hessian is shifted by lam * mean|diag| with lam escalating
    tenfold until the shifted matrix is positive definite; after lam = 0 fails
    the escalation resumes a decade below the last shift that worked.
    Steepest descent is the last resort.
    """
    Hr = H[1:, 1:].tocsc()
    gr = g[1:]
    if Hr.shape[0] == 0:
        rep.regularization.append(0.0)
        return np.zeros_like(g)
    scale = max(float(np.abs(Hr.diagonal()).mean()), 1e-300)
    I = sp.identity(Hr.shape[0], format="csc")
    prev = [x for x in rep.regularization if 0.0 < x < math.inf]
    restart = max(opts.tikhonov_floor, prev[-1] / 10.0) if prev else opts.tikhonov_floor
    lam = 0.0
    while lam <= opts.tikhonov_max:
        lu = _factor_pd((Hr + (lam * scale) * I).tocsc())
        if lu is not None:
            d = lu.solve(-gr)
            if np.all(np.isfinite(d)) and float(gr @ d) < 0.0:
                rep.regularization.append(lam)
                return np.concatenate([[0.0], d])
        lam = restart if lam == 0.0 else lam * 10.0
    rep.descent_fallbacks += 1
    rep.regularization.append(math.inf)
    d = -g.copy()
    d -= d[0]
    return d


def newton_solve(objective, phi0, opts: Optional[SolveOptions] = None):
    """Minimise ``objective`` from an interior ``phi0``; returns (phi, SolveReport).

    ``objective.evaluate(phi, order)`` must return an object with ``value``,
    ``grad`` (order >= 1) and ``hess`` (order 2), with value +inf outside the
    interior.  The result is gauge-normalised so that phi[0] = 0.
    """
    opts = opts or SolveOptions()
    phi = np.asarray(phi0, dtype=float).copy()
    phi -= phi[0]
    rep = SolveReport()
    ev = objective.evaluate(phi, 1 if opts.hessian_mode == "fd" else 2)
    if not math.isfinite(ev.value):
        raise InfeasibleStartError("initial potential is not in the interior (objective is +inf)")
    f, g = ev.value, ev.grad
    rep.values.append(f)
    best, since_best = math.inf, 0
    for it in range(opts.max_iters + 1):
        gnorm = float(np.abs(g).max()) if len(g) else 0.0
        rep.grad_norm = gnorm
        if gnorm <= opts.grad_tol:
            rep.reason = "converged"
            break
        stuck = len(rep.values) > 1 and rep.values[-2] - f <= 1e-10 * (1.0 + abs(f))
        if gnorm < best or not stuck:
            best, since_best = min(best, gnorm), 0
        else:
            since_best += 1
            if since_best >= opts.stall_iters:
                # gradient at its floating-point floor
                rep.reason = "stalled"
                break
        if it == opts.max_iters:
            rep.reason = "max_iters"
            break
        if opts.hessian_mode == "fd":
            H = _fd_hessian(objective, phi, 1e-6 * (1.0 + np.abs(phi).max()))
        else:
            H = ev.hess
        d = _direction(H, g, opts, rep)
        slope = float(g @ d)
        t, nb = 1.0, 0
        accepted = False
        roundoff = 64 * np.finfo(float).eps * (1.0 + abs(f))
        while t >= opts.min_step:
            trial = objective.evaluate(phi + t * d, 0)
            fv = trial.value
            if math.isfinite(fv):
                if fv <= f + opts.armijo * t * slope:
                    accepted = True
                elif abs(t * slope) <= roundoff and fv <= f + roundoff:
                    # decrease below resolution of f: judge by the gradient instead
                    g_try = objective.evaluate(phi + t * d, 1).grad
                    accepted = float(np.abs(g_try).max()) < gnorm
                if accepted:
                    break
            t *= opts.shrink
            nb += 1
        rep.backtracks.append(nb)
        if not accepted:
            rep.reason = "line_search_stall"
            break
        phi = phi + t * d
        ev = objective.evaluate(phi, 1 if opts.hessian_mode == "fd" else 2)
        f, g = ev.value, ev.grad
        rep.values.append(f)
        rep.iterations = it + 1
        line = {"step": it + 1, "value": f, "grad_inf": float(np.abs(g).max()), "backtracks": nb, "t": t}
        if opts.log is not None:
            opts.log(json.dumps(line))
        logger.debug("%s", line)
    return phi, rep


@dataclass
class OuterReport:
    rounds: int
    selection_change: list
    inner: list

    @property
    def converged(self) -> bool:
        return bool(self.inner) and self.inner[-1].converged


def fixed_point_outer(objective, phi0, opts: Optional[SolveOptions] = None, tol: float = 1e-7, max_rounds: int = 20):
    """Alternate Newton solves with recomputing the selection until it settles.

    The objective differentiates its selection exactly, so a converged inner
    solve is already a fixed point; the outer loop certifies that the selected
    points no longer move.  Returns (phi, GradientSelection, OuterReport).
    """
    P = objective.mu.sites
    Y = objective.domain
    kind = objective.selection
    phi = np.asarray(phi0, dtype=float)
    G = GradientSelection.of(build_diagram(P, phi, Y), kind).points
    changes, inner = [], []
    for k in range(max_rounds):
        phi, rep = newton_solve(objective, phi, opts)
        inner.append(rep)
        G_new = GradientSelection.of(build_diagram(P, phi, Y), kind).points
        dG = float(np.abs(G_new - G).max())
        changes.append(dG)
        G = G_new
        if dG <= tol or not rep.converged:
            break
    return phi, GradientSelection(G), OuterReport(len(inner), changes, inner)


def initial_potential(P, Y: ConvexDomain) -> np.ndarray:
    """phi(p) = |p|^2 / 2, whose diagram is the Voronoi diagram of P clipped to Y."""
    P = np.asarray(P, dtype=float)
    phi = 0.5 * (P**2).sum(1)
    d = build_diagram(P, phi, Y)
    if not d.is_interior():
        bad = np.flatnonzero(d.areas <= d.empty_tolerance())
        raise NotInteriorError(
            f"Voronoi cells of sites {bad[:10].tolist()} miss the domain; check that the points lie inside Y"
        )
    return phi
