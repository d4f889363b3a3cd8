import numpy as np
import pytest

from quenchpin.mcf import choose_parameters_mcf
from quenchpin.obstacles import (
    ObstacleField,
    ObstacleShape,
    StrengthDistribution,
    Window,
)
from quenchpin.qew import choose_parameters


def manual_field(shape, centers_x, centers_y, strengths, window=None, period=None):
    """Explicit obstacle list for targeted tests (bypasses sampling)."""
    centers_x = np.atleast_2d(np.asarray(centers_x, dtype=float))
    if centers_x.shape[0] == shape.n and centers_x.shape[1] != shape.n:
        centers_x = centers_x.T
    if window is None:
        window = Window((-100.0,) * shape.n, (100.0,) * shape.n, shape.r1, 100.0)
    return ObstacleField(
        shape=shape, centers_x=centers_x, centers_y=np.asarray(centers_y, float),
        strengths=np.asarray(strengths, float), window=window, lam=1.0, seed=0,
        dist=StrengthDistribution("constant", 1.0), kind="manual", period=period,
    )

QEW_SEEDS = [101, 202, 303, 404, 505]
MCF_SEEDS = [11, 22, 33]

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def fixture_shape():
    return ObstacleShape(n=1, r0=0.25, r1=0.4)


@pytest.fixture(scope="session")
def fixture_dist():
    return StrengthDistribution("constant", 10.0)


@pytest.fixture(scope="session")
def qew_params(fixture_shape, fixture_dist):
    return choose_parameters(fixture_shape, 1.0, fixture_dist)


@pytest.fixture(scope="session")
def mcf_params(fixture_shape, fixture_dist):
    return choose_parameters_mcf(fixture_shape, 1.0, fixture_dist)


def radial_fd_laplacian(profile_fn, r, n, delta):
    """Independent Laplacian oracle: central differences of the radial
    profile embedded in R^n, evaluated on axis points (x, 0, ..)."""
    r = np.asarray(r, dtype=float)
    if n == 1:
        return (profile_fn(r + delta) - 2 * profile_fn(r) + profile_fn(r - delta)) \
            / delta**2
    # n = 2: five-point stencil at the axis point (r, 0)
    up = np.sqrt(r * r + delta * delta)
    return (profile_fn(r + delta) + profile_fn(r - delta) + 2 * profile_fn(up)
            - 4 * profile_fn(r)) / delta**2
