import numpy as np
import pytest

from gazekey.keyboard import resolve_layout
from gazekey.session import load_model
from gazekey.text import load_dictionary


@pytest.fixture(scope="session")
def dictionary():
    return load_dictionary()


@pytest.fixture(scope="session")
def model():
    return load_model()


@pytest.fixture(scope="session")
def qwerty():
    return resolve_layout("qwerty")


@pytest.fixture(scope="session")
def pin():
    return resolve_layout("pin")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, filled in by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
