import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from llgrb.fem import assemble_gram, build_structured_mesh
from llgrb.problems import m0_relaxation, make_noise
from llgrb.tps import TpsConfig, tps_run

settings.register_profile(
    "default", max_examples=30, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture]
)
settings.load_profile("default")

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small():
    """A 4x4 mesh with its Gram matrices and the relaxation noise profile."""
    mesh = build_structured_mesh(4)
    return mesh, assemble_gram(mesh), make_noise(mesh)


@pytest.fixture(scope="session")
def medium():
    mesh = build_structured_mesh(8)
    return mesh, assemble_gram(mesh), make_noise(mesh)


@pytest.fixture(scope="session")
def short_runs(small):
    """Five short high-fidelity trajectories on the small mesh (s = 4)."""
    mesh, grams, noise = small
    cfg = TpsConfig(T=0.05, tau=5e-3)
    ys = np.random.default_rng(3).standard_normal((5, 4))
    return cfg, ys, [tps_run(mesh, grams, noise, m0_relaxation, y, cfg) for y in ys]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
