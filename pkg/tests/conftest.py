import numpy as np
import pytest

from tdfdot import _backend
from tdfdot.model import OpticalMedium, PointTarget, SdPair, TargetSet


@pytest.fixture
def medium():
    return OpticalMedium()


@pytest.fixture
def pair():
    # detector at (14, 10), source at (6, 10)
    return SdPair(source=(6.0, 10.0, 0.0), detector=(14.0, 10.0, 0.0))


@pytest.fixture
def target():
    return PointTarget((10.0, 10.0, 20.0))


@pytest.fixture
def two_targets():
    return TargetSet.of((3.3, 5.2, 16.0), (17.4, 16.7, 18.0))


@pytest.fixture(params=_backend.available())
def backend(request):
    prev = _backend.name()
    _backend.set_backend(request.param)
    yield request.param
    _backend.set_backend(prev)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    from acceptance_report import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
