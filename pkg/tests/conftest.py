import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from topogap.lattice import Lattice
from topogap.medium import RightTriangle, rasterize

settings.register_profile("default", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def square_pair(n):
    """The two right-triangle crystals of the square-lattice experiment."""
    lat = Lattice.square()
    f1 = rasterize(lat, n, 1.0, [RightTriangle((0.35, 0.35), 0.45, 0, 11.7)], 1.0, 11.7)
    f2 = rasterize(lat, n, 1.0, [RightTriangle((0.65, 0.65), 0.45, 180, 11.7)], 1.0, 11.7)
    return f1, f2


@pytest.fixture(scope="session")
def pair16():
    return square_pair(16)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, printed after the run
VERDICTS = {}


def verdict(n, ok, detail):
    VERDICTS[n] = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    return ok


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(VERDICTS):
            terminalreporter.write_line(VERDICTS[n])
