import math

import numpy as np
import pytest

from conftest import interior_instance
from jkoflow.energy import DiscreteMeasure, GradientSelection, InternalEnergySpec, JkoObjective, PotentialSpec
from jkoflow.geom2d import ConvexDomain
from jkoflow.laguerre import build_diagram
from jkoflow.ma import NotInteriorError
from jkoflow.solver import (
    InfeasibleStartError,
    SolveOptions,
    fixed_point_outer,
    initial_potential,
    newton_solve,
)

SQ2 = ConvexDomain.square(2.0)
SQ4 = ConvexDomain.square(4.0)
ENT = InternalEnergySpec("entropy")
PM2 = InternalEnergySpec("power", m=2.0)


def test_options_validation():
    with pytest.raises(ValueError):
        SolveOptions(shrink=1.0)
    with pytest.raises(ValueError):
        SolveOptions(grad_tol=0.0)
    with pytest.raises(ValueError):
        SolveOptions(hessian_mode="bfgs")
    with pytest.raises(ValueError):
        SolveOptions(stall_iters=0)
    with pytest.raises(ValueError, match="unknown solver keys"):
        SolveOptions.from_dict({"tol": 1e-8})
    o = SolveOptions(grad_tol=1e-9, max_iters=7)
    assert SolveOptions.from_dict(o.to_dict()) == o


def test_symmetric_pair_gives_equal_areas():
    P = np.array([[-0.5, 0.0], [0.5, 0.0]])
    obj = JkoObjective(DiscreteMeasure.uniform(P), 0.1, SQ2, ENT)
    phi, rep = newton_solve(obj, np.array([0.0, 0.3]))
    assert rep.converged
    d = build_diagram(P, phi, SQ2)
    np.testing.assert_allclose(d.areas, [2.0, 2.0], atol=1e-9)


def test_single_site_is_immediate():
    P = np.array([[0.1, -0.2]])
    obj = JkoObjective(DiscreteMeasure.uniform(P), 0.1, SQ2, ENT)
    phi, rep = newton_solve(obj, np.array([4.0]))
    assert rep.converged and rep.iterations <= 1
    assert phi[0] == 0.0


@pytest.mark.parametrize("mode", ["ac", "selection"])
def test_newton_converges_monotonically(rng, mode):
    P, _ = interior_instance(rng, 40, SQ4)
    obj = JkoObjective(DiscreteMeasure.uniform(P), 0.1, SQ4, PM2, PotentialSpec.crowd(), mode, "centroid")
    phi, rep = newton_solve(obj, initial_potential(P, SQ4), SolveOptions(grad_tol=1e-9))
    assert rep.converged, rep.reason
    assert rep.monotone()
    assert np.abs(obj.evaluate(phi, 1).grad).max() <= 1e-9
    assert len(rep.values) == rep.iterations + 1


def test_solution_independent_of_gauge(rng):
    P, _ = interior_instance(rng, 30, SQ4)
    obj = JkoObjective(DiscreteMeasure.uniform(P), 0.1, SQ4, ENT, PotentialSpec(quad_coef=0.5), "ac")
    phi0 = initial_potential(P, SQ4)
    a, ra = newton_solve(obj, phi0)
    b, rb = newton_solve(obj, phi0 + 17.0)
    assert ra.converged and rb.converged
    np.testing.assert_allclose(a, b, atol=1e-8)


def test_fd_hessian_mode_agrees(rng):
    P, _ = interior_instance(rng, 12, SQ2)
    obj = JkoObjective(DiscreteMeasure.uniform(P), 0.1, SQ2, PM2, PotentialSpec(quad_coef=1.0), "ac")
    a, _ = newton_solve(obj, initial_potential(P, SQ2))
    b, rb = newton_solve(obj, initial_potential(P, SQ2), SolveOptions(hessian_mode="fd", grad_tol=1e-7))
    assert rb.grad_norm <= 1e-7
    np.testing.assert_allclose(a, b, atol=1e-5)


def test_infeasible_start():
    P = np.array([[-0.5, 0.0], [0.5, 0.0]])
    obj = JkoObjective(DiscreteMeasure.uniform(P), 0.1, SQ2, ENT)
    with pytest.raises(InfeasibleStartError):
        newton_solve(obj, np.array([0.0, 5.0]))


def test_max_iters_zero_reports():
    P = np.array([[-0.5, 0.0], [0.5, 0.2]])
    obj = JkoObjective(DiscreteMeasure.uniform(P), 0.1, SQ2, ENT)
    _, rep = newton_solve(obj, np.array([0.0, 0.3]), SolveOptions(max_iters=0))
    assert rep.reason == "max_iters" and not rep.converged


def test_small_tau_moves_less(rng):
    # the optimal transport cost is non-increasing as tau shrinks
    P, _ = interior_instance(rng, 25, SQ4)
    mu = DiscreteMeasure.uniform(P)
    costs = []
    for tau in (0.1, 0.01, 0.001):
        obj = JkoObjective(mu, tau, SQ4, PM2, PotentialSpec(quad_coef=1.0), "selection", "centroid")
        phi, rep = newton_solve(obj, initial_potential(P, SQ4))
        assert rep.converged
        costs.append(obj.evaluate(phi).terms["W"])
    assert costs[0] > costs[1] > costs[2]


def test_fixed_point_outer(rng):
    P, _ = interior_instance(rng, 20, SQ4)
    obj = JkoObjective(DiscreteMeasure.uniform(P), 0.1, SQ4, PM2, PotentialSpec.crowd(), "selection", "centroid")
    phi, G, rep = fixed_point_outer(obj, initial_potential(P, SQ4))
    assert rep.converged
    assert rep.selection_change[-1] <= 1e-7
    np.testing.assert_allclose(G.points, GradientSelection.centroid(build_diagram(P, phi, SQ4)).points, atol=1e-12)


def test_initial_potential():
    P = np.array([[-0.5, 0.0], [0.5, 0.0]])
    phi = initial_potential(P, SQ2)
    np.testing.assert_allclose(build_diagram(P, phi, SQ2).areas, [2.0, 2.0])
    with pytest.raises(NotInteriorError):
        initial_potential(np.array([[0.0, 0.0], [9.0, 0.0]]), SQ2)
