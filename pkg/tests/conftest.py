import numpy as np
import pytest

from kslab.model import Domain, ScalarField

ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])


@pytest.fixture
def line64():
    return Domain((1.0,), (64,))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def lognormal(domain, seed, sigma=0.5, mean=1.0):
    g = np.random.default_rng(seed)
    return ScalarField(domain, mean * np.exp(sigma * g.standard_normal(domain.shape)))
