import math

import pytest

from soliton_forge.builder import build_from_translation
from soliton_forge.flexibility import build_flexible_configuration
from soliton_forge.planar import GrimReaperCurve, PeriodicConfiguration

QUARTER = math.pi / 4

# criterion number -> pass/fail line, filled by the acceptance suite
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])


def cross_config():
    """Two reapers crossing at (0, ln2/2); the huge period keeps copies apart."""
    return PeriodicConfiguration((GrimReaperCurve(-QUARTER, 0.0), GrimReaperCurve(QUARTER, 0.0)),
                                 (100.0, 0.0), 0.1)


def stacked_config():
    """Low middle reaper C with two higher side reapers A, B crossing above it."""
    return PeriodicConfiguration((GrimReaperCurve(-1.2, 0.3), GrimReaperCurve(0.0, 0.0),
                                  GrimReaperCurve(1.2, 0.3)), (100.0, 0.0), 0.1)


@pytest.fixture(scope="session")
def cross():
    return cross_config()


@pytest.fixture(scope="session")
def cross_flex():
    return build_flexible_configuration(cross_config())


@pytest.fixture(scope="session")
def case1():
    return build_from_translation((2.0, 0.5))


@pytest.fixture(scope="session")
def case3():
    return build_from_translation((1.0, 0.0))


@pytest.fixture(scope="session")
def stacked():
    return stacked_config()


def two_part_config():
    """Stacked fixture plus a high curve D that never reaches the bottom, forcing a second part."""
    return PeriodicConfiguration((GrimReaperCurve(-1.2, 0.3), GrimReaperCurve(0.0, 0.0),
                                  GrimReaperCurve(1.2, 0.3), GrimReaperCurve(0.3, 2.0)), (100.0, 0.0), 0.1)
