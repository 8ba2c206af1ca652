import numpy as np
import pytest

from sasnav.geometry import PingGeometry, Pose, SystemConfig
from sasnav.scene import make_grid

# Lines reported by the acceptance suite, echoed in the terminal summary.
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def cfg():
    return SystemConfig()


@pytest.fixture
def small_cfg():
    """Four-receiver array: fast enough for dense oracles."""
    return SystemConfig(N=4, K=1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def tiny_grid(cfg, n=8, center=(0.0, 10.0)):
    return make_grid(cfg, (n * cfg.range_resolution, n * cfg.range_resolution), center)


def random_geometry(cfg, rng, spread=0.05):
    pca = Pose(rng.normal(0, spread), rng.normal(0, spread), rng.normal(0, 0.01))
    return PingGeometry.replacement(pca, cfg)
