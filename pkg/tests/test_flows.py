import numpy as np
import pytest

from jkoflow.energy import InternalEnergySpec, PotentialSpec
from jkoflow.flows import FlowConfig, crowd_flow, crowd_initial_density, diffusion_flow, sunflower
from jkoflow.geom2d import ConvexDomain
from jkoflow.raster import Grid

PM2 = InternalEnergySpec("power", m=2.0)
CONG = InternalEnergySpec("congestion", alpha=1.0, beta=0.01)


def test_config_validation():
    with pytest.raises(ValueError):
        FlowConfig(tau=0.0)
    with pytest.raises(ValueError):
        FlowConfig(mode="frozen")
    with pytest.raises(ValueError):
        FlowConfig(selection="median")


def test_sunflower_inside_disc():
    P = sunflower(200, 0.8)
    assert np.hypot(*P.T).max() <= 0.8
    Q = sunflower(200, 0.8, "barenblatt")
    assert np.hypot(*Q.T).max() <= 0.8
    with pytest.raises(ValueError):
        sunflower(5, 1.0, "gaussian")


def test_single_site_stays_put():
    cfg = FlowConfig(tau=0.1, steps=3, internal=PM2, points=np.array([[0.0, 0.0]]))
    tr = diffusion_flow(cfg)
    for r in tr.records:
        np.testing.assert_allclose(r.points, [[0.0, 0.0]], atol=1e-12)


def test_diffusion_spreads_and_conserves_mass():
    cfg = FlowConfig(tau=0.01, steps=3, internal=PM2, init="blob", n_points=40, init_radius=0.6)
    tr = diffusion_flow(cfg)
    assert not tr.truncated
    rad = [np.sqrt((r.points**2).sum(1).mean()) for r in tr.records]
    assert rad[-1] > rad[0]
    # step 0 is evaluated on the Voronoi diagram, a different discretisation
    U = tr.series("U")[1:]
    assert np.all(np.diff(U) <= 1e-12)
    for r in tr.records:
        assert r.masses.sum() == pytest.approx(1.0, abs=1e-15)
        assert np.all(cfg.domain.contains(r.points, tol=1e-12))


def test_diffusion_deterministic():
    cfg = FlowConfig(tau=0.01, steps=2, internal=PM2, n_points=25, seed=4)
    a, b = diffusion_flow(cfg), diffusion_flow(cfg)
    for ra, rb in zip(a.records, b.records):
        np.testing.assert_array_equal(ra.points, rb.points)


def test_fast_diffusion_warning_and_range():
    cfg = FlowConfig(tau=0.01, steps=1, internal=InternalEnergySpec("power", m=0.8), n_points=12)
    assert any("fast diffusion" in w for w in diffusion_flow(cfg).warnings)
    with pytest.raises(ValueError, match="0.5"):
        diffusion_flow(FlowConfig(steps=1, internal=InternalEnergySpec("power", m=0.4), n_points=5))


def test_crowd_initial_density():
    g = Grid.square(4.0, 40)
    rho = crowd_initial_density(g, 0.0)
    assert (rho * g.pixel_area).sum() == pytest.approx(1.0)
    assert rho.max() == pytest.approx(0.5)


def test_crowd_uniform_without_potential_is_stationary():
    Y = ConvexDomain.square(4.0)
    n = 8
    m = np.full(n * n, 1.0 / (n * n))
    cfg = FlowConfig(domain=Y, tau=0.05, steps=2, internal=CONG, grid_n=n, masses=m)
    tr = crowd_flow(cfg)
    for r in tr.records:
        np.testing.assert_allclose(r.masses, m, atol=1e-12)


def test_crowd_small_grid_moves_toward_exit():
    cfg = FlowConfig(tau=0.01, steps=2, internal=CONG, potential=PotentialSpec.crowd(), grid_n=16)
    tr = crowd_flow(cfg)
    assert not tr.truncated
    c = tr.grid.centers()[:, 0]
    mx = [float(r.masses @ c) for r in tr.records]
    assert mx[0] < mx[1] < mx[2]
    F = tr.series("F")
    assert np.all(np.diff(F) <= 0)
    for r in tr.records:
        assert abs(r.masses.sum() - 1.0) <= 1e-12
        assert r.grid_density.max() <= 1.0 + 1e-9


def test_write_trace(tmp_path):
    cfg = FlowConfig(tau=0.01, steps=2, internal=PM2, n_points=10, snapshot_every=1)
    diffusion_flow(cfg, out_dir=tmp_path)
    names = sorted(p.name for p in tmp_path.iterdir())
    assert "trace.json" in names
    for k in range(3):
        assert f"points_{k}.csv" in names and f"snapshot_{k}.svg" in names


def test_on_step_callback():
    seen = []
    diffusion_flow(FlowConfig(tau=0.01, steps=2, internal=PM2, n_points=8), on_step=lambda r: seen.append(r.k))
    assert seen == [1, 2]
