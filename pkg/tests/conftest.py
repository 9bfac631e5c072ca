import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from roughbvp.domain2d import build_domain
from roughbvp.mspace import build_space

settings.register_profile("pkg", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow,
                                                 HealthCheck.function_scoped_fixture])
settings.load_profile("pkg")

# lines printed by the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def circle512():
    return build_space("circle", 512)


@pytest.fixture(scope="session")
def circle64():
    return build_space("circle", 64)


@pytest.fixture(scope="session")
def segment512():
    return build_space("segment", 512)


@pytest.fixture(scope="session")
def cantor5():
    return build_space("cantor4", 5)


@pytest.fixture(scope="session")
def disk32():
    return build_domain("disk", 1 / 32)


@pytest.fixture(scope="session")
def disk64():
    return build_domain("disk", 1 / 64)


@pytest.fixture(scope="session")
def saw64():
    return build_domain("sawtooth", 1 / 64)


@pytest.fixture(scope="session")
def box32():
    return build_domain("halfspace_box", 1 / 32)


def smooth_on(space, rng, modes=4):
    """Random smooth (hence Lipschitz) function of the coordinates of a space."""
    X = space.coords
    if X.shape[1] == 1:
        X = np.c_[X, np.zeros(len(X))]
    f = np.zeros(space.n)
    for m in range(1, modes + 1):
        k = rng.normal(size=2) * 2 * math.pi * m / 2
        f += rng.normal() * np.cos(X @ k + rng.uniform(0, 2 * math.pi)) / m
    return f
