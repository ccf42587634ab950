import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fracma.core import AffineField, FarFieldModel, GridFunction, SolverConfig
from fracma.solver import build_barrier, solve

settings.register_profile("fracma", deadline=None, max_examples=30,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("fracma")


@pytest.fixture(scope="session")
def model_run():
    """The 64^2, six-floor model solve shared by the slow tests."""
    config = SolverConfig(n_nodes=64, stall_stop=False)
    phi = FarFieldModel.isotropic(2)
    barrier = build_barrier(phi, config.s, config.barrier_tau, config.quad,
                            config.box_radius, config.h)
    u, report, out = solve(phi, config, barrier=barrier, with_output=True)
    return {"config": config, "phi": phi, "barrier": barrier, "u": u, "report": report,
            "out": out}


@pytest.fixture(scope="session")
def small_config():
    return SolverConfig(n_nodes=24, floors=(0.5, 0.25), rotations=16, eig_levels=4,
                        coarse_factor=2, stall_stop=False)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_run(small_config):
    """A 24^2 two-floor solve for the cheap end-to-end tests."""
    phi = FarFieldModel.isotropic(2)
    c = small_config
    barrier = build_barrier(phi, c.s, c.barrier_tau, c.quad, c.box_radius, c.h)
    u, report = solve(phi, c, barrier=barrier)
    return {"config": c, "phi": phi, "barrier": barrier, "u": u, "report": report}


def random_lipschitz_offset(seed, n_nodes=33, box=4.0):
    """Random combination of cones and sines with Lipschitz constant at most 3."""
    rng = np.random.default_rng(seed)
    g = np.linspace(-box, box, n_nodes)
    X, Y = np.meshgrid(g, g, indexing="ij")
    out = np.zeros_like(X)
    for _ in range(3):
        a = rng.uniform(-box, box, 2)
        out += rng.uniform(-0.5, 0.5) * np.hypot(X - a[0], Y - a[1])
        k = rng.uniform(0.2, 1.0, 2)
        out += rng.uniform(-0.5, 0.5) * np.sin(k[0] * X + k[1] * Y)
    return GridFunction(box, 2 * box / (n_nodes - 1), AffineField(np.zeros(2)), out)


@pytest.fixture(scope="session")
def lipschitz_offset():
    return random_lipschitz_offset
