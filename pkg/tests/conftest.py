import numpy as np
import pytest

from nmsosd.codes import ccsds_128_64, hamming74, random_code


@pytest.fixture(scope="session")
def ham():
    return hamming74()


@pytest.fixture(scope="session")
def ccsds():
    return ccsds_128_64()


@pytest.fixture(scope="session")
def small_code():
    return random_code(16, 8, np.random.default_rng(3))


ACCEPTANCE_LINES = {}


def record_criterion(number, passed, detail):
    """Store one pass/fail line for the acceptance summary and echo it."""
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line, flush=True)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
