import math

import numpy as np
import pytest

from conftest import interior_instance, separated_instance
from jkoflow.energy import (
    DiscreteMeasure,
    GaussianBump,
    GradientSelection,
    InfeasibleSelectionError,
    InternalEnergySpec,
    JkoObjective,
    PotentialSpec,
    ac_pushforward,
    discrete_pushforward,
    internal_energy,
    jko_objective,
    mccann_check,
    nonconvexity_demo,
    potential_energy,
    wasserstein_ac,
    wasserstein_discrete,
)
from jkoflow.geom2d import ConvexDomain
from jkoflow.laguerre import build_diagram
from jkoflow.ma import ma_jacobian
from jkoflow.validate import fd_check

SQ2 = ConvexDomain.square(2.0)
SQ4 = ConvexDomain.square(4.0)
UNIT = ConvexDomain([[0, 0], [1, 0], [1, 1], [0, 1]])
TWO = np.array([[-1.0, 0.0], [1.0, 0.0]])
HALF = DiscreteMeasure(TWO, [0.5, 0.5])


# -- measures and pushforwards ------------------------------------------------------


def test_measure_validation():
    with pytest.raises(ValueError):
        DiscreteMeasure(TWO, [0.5, 0.6])
    with pytest.raises(ValueError):
        DiscreteMeasure(TWO, [1.0, 0.0])
    with pytest.raises(ValueError):
        DiscreteMeasure(TWO, [1.0])
    m = DiscreteMeasure.normalized(TWO, [2.0, 2.0])
    np.testing.assert_allclose(m.masses, [0.5, 0.5])


def test_discrete_pushforward_identity_and_collapse(rng):
    P, _ = interior_instance(rng, 15, SQ2)
    phi = 0.5 * (P**2).sum(1)
    mu = DiscreteMeasure.uniform(P)
    nu = discrete_pushforward(mu, GradientSelection(P), phi, SQ2)
    order = np.lexsort((P[:, 1], P[:, 0]))
    np.testing.assert_allclose(nu.sites, P[order])
    np.testing.assert_allclose(nu.masses, mu.masses)
    one = discrete_pushforward(mu, GradientSelection(np.tile([0.2, 0.1], (15, 1))))
    assert len(one) == 1 and one.masses[0] == pytest.approx(1.0)


def test_infeasible_selection_rejected():
    G = GradientSelection(np.array([[0.5, 0.0], [0.5, 0.0]]))
    with pytest.raises(InfeasibleSelectionError):
        discrete_pushforward(HALF, G, np.zeros(2), SQ2)


def test_ac_pushforward():
    single = DiscreteMeasure(np.array([[0.3, 0.4]]), [1.0])
    ac = ac_pushforward(single, np.zeros(1), UNIT)
    np.testing.assert_allclose(ac.density, [1.0])
    ac = ac_pushforward(HALF, np.zeros(2), SQ2)
    np.testing.assert_allclose(ac.density, [0.25, 0.25])
    assert ac.total_mass() == pytest.approx(1.0, abs=1e-15)


def test_wasserstein_discrete():
    mu = DiscreteMeasure(np.array([[0.2, 0.3]]), [1.0])
    assert wasserstein_discrete(mu, GradientSelection(mu.sites)) == 0.0
    assert wasserstein_discrete(mu, GradientSelection(mu.sites + [1.0, 0.0])) == pytest.approx(1.0)
    rng = np.random.default_rng(1)
    P = rng.normal(size=(6, 2))
    D = rng.normal(size=(6, 2))
    nu = DiscreteMeasure.uniform(P)
    base = wasserstein_discrete(nu, GradientSelection(P + D))
    assert wasserstein_discrete(nu, GradientSelection(P + 3 * D)) == pytest.approx(9 * base)


def test_wasserstein_ac_examples(rng):
    mu = DiscreteMeasure(np.array([[0.5, 0.5]]), [1.0])
    assert wasserstein_ac(mu, np.zeros(1), UNIT) == pytest.approx(1.0 / 6.0, rel=1e-14)
    # each half [0,1] x [-1,1] seen from its site (+-1, 0): 1/4 * (2/3 + 2/3), twice
    assert wasserstein_ac(HALF, np.zeros(2), SQ2) == pytest.approx(2.0 / 3.0, rel=1e-14)
    P, phi = interior_instance(rng, 20, SQ2)
    nu = DiscreteMeasure.uniform(P)
    d = build_diagram(P, phi, SQ2)
    wd = wasserstein_discrete(nu, GradientSelection.centroid(d))
    from jkoflow.geom2d import centroid, second_moment

    var = sum(m / a * second_moment(c, centroid(c)) for m, a, c in zip(nu.masses, d.areas, d.cells))
    wa = wasserstein_ac(nu, phi, SQ2)
    assert wa == pytest.approx(wd + var, rel=1e-10)
    assert wa >= wd


# -- energies ---------------------------------------------------------------------


def test_potential_energy_examples():
    V = PotentialSpec(quad_coef=1.0)
    assert potential_energy(DiscreteMeasure(np.array([[1.0, 0.0]]), [1.0]), V) == pytest.approx(1.0)
    a, b = np.array([0.3, -1.0]), np.array([1.2, 0.4])
    W = PotentialSpec(interaction=1.0)
    nu = DiscreteMeasure(np.array([a, b]), [0.5, 0.5])
    assert potential_energy(nu, W) == pytest.approx(0.5 * ((a - b) ** 2).sum())
    assert PotentialSpec.crowd()(np.array([[0.0, 0.0]]))[0] == pytest.approx(9.0)


def test_potential_field_derivatives(rng):
    V = PotentialSpec(0.7, (0.2, -0.1), (GaussianBump(2.0, (0.5, 0.5), 1.5), GaussianBump(-1.0, (-0.3, 0.2), 3.0)))
    x = rng.normal(size=(5, 2))
    v, g, H = V.field(x)
    h = 1e-6
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        vp, gp, _ = V.field(x + e)
        vm, gm, _ = V.field(x - e)
        np.testing.assert_allclose((vp - vm) / (2 * h), g[:, k], atol=1e-8)
        np.testing.assert_allclose((gp - gm) / (2 * h), H[:, :, k], atol=1e-7)


def test_potential_roundtrip():
    V = PotentialSpec.crowd()
    assert PotentialSpec.from_dict(V.to_dict()) == V
    assert PotentialSpec.from_dict({"kind": "crowd"}) == V
    with pytest.raises(ValueError, match="unknown keys"):
        PotentialSpec.from_dict({"quad": 1})


def test_internal_energy_examples():
    ent = InternalEnergySpec("entropy")
    assert internal_energy(HALF, np.zeros(2), SQ2, ent) == pytest.approx(-math.log(2.0))
    single = DiscreteMeasure(np.array([[0.5, 0.5]]), [1.0])
    assert internal_energy(single, np.zeros(1), UNIT, InternalEnergySpec("power", m=2.0)) == pytest.approx(1.0)
    cong = InternalEnergySpec("congestion", alpha=1.0, beta=0.01)
    assert internal_energy(single, np.zeros(1), UNIT, cong) == math.inf
    small = DiscreteMeasure(np.array([[0.0, 0.0]]), [1.0])
    assert math.isfinite(internal_energy(small, np.zeros(1), SQ2, cong))


def test_internal_energy_infinite_when_cell_empty():
    mu = DiscreteMeasure(TWO, [0.5, 0.5])
    assert internal_energy(mu, np.array([0.0, 3.0]), SQ2, InternalEnergySpec("entropy")) == math.inf


def test_congestion_density_derivatives():
    U = InternalEnergySpec("congestion", alpha=1.5, beta=0.3)
    r = np.linspace(0.05, 0.9, 7)
    u, u1, u2 = U.density(r)
    h = 1e-6
    np.testing.assert_allclose((U.density(r + h)[0] - U.density(r - h)[0]) / (2 * h), u1, rtol=1e-6)
    np.testing.assert_allclose((U.density(r + h)[1] - U.density(r - h)[1]) / (2 * h), u2, rtol=1e-5)
    assert np.all(np.isinf(U.density(np.array([1.0, 1.5]))[0]))


def test_spec_parsing():
    assert InternalEnergySpec.from_dict({"kind": "power", "m": 1.0}).kind == "entropy"
    s = InternalEnergySpec.from_dict({"kind": "congestion", "alpha": 1, "beta": 0.01})
    assert (s.alpha, s.beta) == (1.0, 0.01)
    assert InternalEnergySpec.from_dict(s.to_dict()) == s
    with pytest.raises(ValueError, match="unknown keys"):
        InternalEnergySpec.from_dict({"kind": "power", "m": 2, "gamma": 3})
    with pytest.raises(ValueError):
        InternalEnergySpec.from_dict({"kind": "magic"})
    with pytest.raises(ValueError):
        InternalEnergySpec("power", m=1.0)
    assert InternalEnergySpec("power", m=2.0).superlinear
    assert not InternalEnergySpec("power", m=0.7).superlinear


def test_mccann():
    assert mccann_check(InternalEnergySpec("entropy")).ok
    assert mccann_check(InternalEnergySpec("power", m=2.0)).ok
    assert mccann_check(InternalEnergySpec("congestion", alpha=1.0, beta=0.01)).ok
    bad = InternalEnergySpec("custom", U=lambda r: -(r**2), dU=lambda r: -2 * r, d2U=lambda r: -2 + 0 * r)
    assert not mccann_check(bad).ok


# -- objective --------------------------------------------------------------------

SPECS = [
    InternalEnergySpec("entropy"),
    InternalEnergySpec("power", m=2.0),
    InternalEnergySpec("congestion", alpha=1.0, beta=0.01),
]


@pytest.mark.parametrize("U", SPECS, ids=lambda u: u.kind)
@pytest.mark.parametrize("mode", ["ac", "selection"])
def test_objective_gradient_and_hessian_fd(rng, U, mode):
    P, phi = separated_instance(rng, 20, SQ4)
    mu = DiscreteMeasure.normalized(P, rng.uniform(0.5, 1.5, len(P)))
    obj = JkoObjective(mu, 0.1, SQ4, U, PotentialSpec.crowd(), mode, "centroid")
    assert fd_check(obj, phi, 1).passed
    assert fd_check(obj, phi, 2).passed


def test_objective_steiner_selection_gradient(rng):
    P, phi = separated_instance(rng, 16, SQ4)
    obj = JkoObjective(DiscreteMeasure.uniform(P), 0.05, SQ4, SPECS[0], PotentialSpec.crowd(), "selection", "steiner")
    assert fd_check(obj, phi, 1).passed


def test_objective_interaction_gradient(rng):
    P, phi = separated_instance(rng, 12, SQ4)
    V = PotentialSpec(quad_coef=0.3, interaction=0.5)
    obj = JkoObjective(DiscreteMeasure.uniform(P), 0.1, SQ4, SPECS[1], V, "selection", "centroid")
    assert fd_check(obj, phi, 1).passed
    assert fd_check(obj, phi, 2).passed
    with pytest.raises(ValueError):
        JkoObjective(DiscreteMeasure.uniform(P), 0.1, SQ4, SPECS[1], V, "ac")


def test_entropy_gradient_chain_rule(rng):
    P, phi = interior_instance(rng, 30, SQ2)
    mu = DiscreteMeasure.uniform(P)
    obj = JkoObjective(mu, math.inf, SQ2, InternalEnergySpec("entropy"))
    ev = obj.evaluate(phi, 1)
    d = ev.diagram
    J = ma_jacobian(P, phi, SQ2, diagram=d)
    np.testing.assert_allclose(ev.grad, -(J.T @ (mu.masses / d.areas)), atol=1e-13)


def test_objective_gauge(rng):
    P, phi = interior_instance(rng, 25, SQ4)
    obj = JkoObjective(DiscreteMeasure.uniform(P), 0.1, SQ4, SPECS[1], PotentialSpec.crowd(), "ac")
    a = obj.evaluate(phi, 1)
    b = obj.evaluate(phi + 2.5, 1)
    assert b.value == pytest.approx(a.value, rel=1e-12)
    assert abs(a.grad.sum()) <= 1e-9 * np.linalg.norm(a.grad)


def test_objective_tau_infinity_drops_transport(rng):
    P, phi = interior_instance(rng, 10, SQ2)
    mu = DiscreteMeasure.uniform(P)
    V = PotentialSpec(quad_coef=1.0)
    big = JkoObjective(mu, math.inf, SQ2, SPECS[0], V, "ac").evaluate(phi)
    assert big.value == pytest.approx(big.terms["U"] + big.terms["E"])
    assert JkoObjective(mu, 1e12, SQ2, SPECS[0], V, "ac")(phi) == pytest.approx(big.value, rel=1e-9)


def test_objective_outside_interior():
    obj = JkoObjective(HALF, 0.1, SQ2, SPECS[0])
    ev = obj.evaluate(np.array([0.0, 3.0]), 2)
    assert ev.value == math.inf and ev.grad is None


def test_functional_form(rng):
    P, phi = interior_instance(rng, 8, SQ2)
    mu = DiscreteMeasure.uniform(P)
    out = jko_objective(phi, mu, 0.1, SQ2, {"internal": SPECS[0]}, "ac")
    assert set(out) == {"value", "gradient", "hessian", "terms"}
    assert out["hessian"].shape == (8, 8)


def test_objective_validation():
    with pytest.raises(ValueError):
        JkoObjective(HALF, 0.0, SQ2)
    with pytest.raises(ValueError):
        JkoObjective(HALF, 0.1, SQ2, mode="frozen")


# -- nonconvexity example ---------------------------------------------------------


def test_nonconvexity_demo():
    demo = nonconvexity_demo()
    assert demo.found
    t0, tm, t1, gap = demo.violations[0]
    assert gap > 0 and t0 < tm < t1
    assert len(demo.cells_t0) == 3 and len(demo.cells_t1) == 3
    # both endpoints are valid diagrams of the square
    for cells in (demo.cells_t0, demo.cells_t1):
        from jkoflow.geom2d import ConvexPolygon, area

        assert sum(area(ConvexPolygon(c)) for c in cells) == pytest.approx(4.0)


def test_nonconvexity_curve_continuous():
    coarse = nonconvexity_demo(101)
    fine = nonconvexity_demo(201)
    np.testing.assert_allclose(fine.values[::2], coarse.values, atol=1e-12)
    assert np.abs(np.diff(fine.values)).max() < 0.05
