import numpy as np
import pytest

from lccs_tuner.converter import ConverterParams, build_subsystems, derive_params

# lines of the form "criterion N: PASS|FAIL ..." collected by test_acceptance
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


@pytest.fixture(scope="session")
def params():
    return ConverterParams()


@pytest.fixture(scope="session")
def derived(params):
    return derive_params(params)


@pytest.fixture(scope="session")
def subsystems(params, derived):
    return build_subsystems(params, derived)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
