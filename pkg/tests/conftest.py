import numpy as np
import pytest
from hypothesis import settings

from densimar.forward import MaterialContext
from densimar.geometry import ScanGeometry
from densimar.spectrum import bundled_mac, bundled_spectrum, resample_spectrum

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


@pytest.fixture(scope="session")
def spectrum100():
    return bundled_spectrum()


@pytest.fixture(scope="session")
def ctx40(spectrum100):
    return MaterialContext(resample_spectrum(spectrum100, 40, 20, 120), bundled_mac("water"),
                           bundled_mac("titanium"))


@pytest.fixture
def small_geom():
    return ScanGeometry(200.0, 200.0, 24, 360.0, 48, 1.5, 24.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_VERDICTS = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def verdicts(request):
    """Collects one PASS/FAIL line per acceptance criterion for the summary."""
    return request.config.stash.setdefault(_VERDICTS, [])


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
