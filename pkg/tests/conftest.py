import os

import pytest
from hypothesis import HealthCheck, settings

from movns import geometry as geo
from movns.quadrature import gauss_legendre_square

settings.register_profile("movns", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("movns")

BUILTIN = {
    "identity": geo.identity_map,
    "dilation": geo.dilation_map,
    "rotation": geo.rotation_map,
    "shear": geo.shear_map,
    "wavy_shear": geo.wavy_shear_map,
}

_CRITERIA = []


@pytest.fixture(params=sorted(BUILTIN))
def builtin_map(request):
    return BUILTIN[request.param]()


@pytest.fixture(scope="session")
def quad24():
    return gauss_legendre_square(24)


@pytest.fixture(scope="session")
def quad33():
    return gauss_legendre_square(33)


@pytest.fixture
def criterion(capsys):
    """Record and echo one acceptance line: ``criterion(n, ok, detail)``."""

    def emit(number, passed, detail):
        line = f"CRITERION {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        _CRITERIA.append(line)
        with capsys.disabled():
            print("\n" + line)
        return passed

    return emit


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: longer Monte Carlo or refinement runs")
    os.environ.setdefault("MOVNS_BACKEND", "numba")
