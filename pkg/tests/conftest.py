import numpy as np
import pytest

from jkoflow.geom2d import ConvexDomain
from jkoflow.laguerre import build_diagram


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def square2():
    return ConvexDomain.square(2.0)


@pytest.fixture
def square4():
    return ConvexDomain.square(4.0)


def interior_instance(rng, n, Y, noise=0.05):
    """Sites inside Y with a perturbed Voronoi potential; every cell nonempty."""
    from jkoflow.validate import random_instance

    return random_instance(rng, n, Y, noise)


def separated_instance(rng, n, Y, noise=0.01):
    """Jittered lattice: no tiny cells, so finite differences stay inside one topology."""
    from jkoflow.validate import jittered_grid

    P = jittered_grid(rng, n, Y)
    phi = 0.5 * (P**2).sum(1) + noise * rng.normal(size=len(P))
    assert build_diagram(P, phi, Y).is_interior()
    return P, phi


# acceptance criteria record one line each here; printed after the run
ACCEPTANCE = {}


def record(k: int, ok: bool, detail: str) -> None:
    line = f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[k] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
