import numpy as np
import pytest

from polya_opinion.dynamics import BiasProfile, InitialSettings
from polya_opinion.graph import load_network


@pytest.fixture
def interior_setup():
    net = load_network("complete:10")
    bias = BiasProfile.from_gamma([2.0] * 5 + [0.5] * 5)
    return net, bias, InitialSettings.from_b1(net)


@pytest.fixture
def star_setup():
    net = load_network("star:5")
    bias = BiasProfile.from_gamma([1.2, 0.5, 0.5, 0.5, 0.5])
    return net, bias, InitialSettings.from_b1(net)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed after the test session
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
