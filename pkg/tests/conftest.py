import numpy as np
import pytest

from ivimfit.model import COMPACT_BVALUES, DIPY_IVIM_BVALUES, AcquisitionScheme, IvimParams, ParamBounds

ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def scheme():
    return AcquisitionScheme(COMPACT_BVALUES)


@pytest.fixture
def invivo_scheme():
    return AcquisitionScheme(DIPY_IVIM_BVALUES)


@pytest.fixture
def bounds():
    return ParamBounds()


@pytest.fixture
def rng():
    return np.random.default_rng(20240501)


def random_params(rng, bounds=ParamBounds(), s0=(0.5, 2000.0)):
    return IvimParams(
        rng.uniform(*s0),
        rng.uniform(0.0, 1.0),
        rng.uniform(*bounds.d_star),
        rng.uniform(*bounds.d),
    )


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Collects one ``PASS``/``FAIL`` line per acceptance criterion."""
    return request.config.stash.setdefault(ACCEPTANCE_KEY, [])


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
