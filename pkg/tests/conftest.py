import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "dudocf", deadline=None, max_examples=25, suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture]
)
settings.load_profile("dudocf")


@pytest.fixture(scope="session", autouse=True)
def _matrix_cache(tmp_path_factory):
    # keep test runs away from the user's cache directory
    if "DUDO_CACHE" not in os.environ:
        os.environ["DUDO_CACHE"] = str(tmp_path_factory.mktemp("sm_cache"))
    yield


@pytest.fixture(scope="session")
def toy_geom():
    from dudocf.physics import ScannerGeometry

    return ScannerGeometry.toy()


@pytest.fixture(scope="session")
def toy_A(toy_geom):
    from dudocf.physics import build_system_matrix

    return build_system_matrix(toy_geom)


@pytest.fixture(scope="session")
def micro_A():
    from dudocf.physics import ScannerGeometry, build_system_matrix

    return build_system_matrix(ScannerGeometry.micro())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPT_KEY = pytest.StashKey[list]()


@pytest.fixture
def accept(request):
    """``accept(k, ok, detail)`` records one PASS/FAIL line for acceptance criterion ``k``."""
    lines = request.config.stash.setdefault(ACCEPT_KEY, [])

    def record(k, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {k}: {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPT_KEY, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
