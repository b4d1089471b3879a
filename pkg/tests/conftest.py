import math

import pytest

from dpagg.datagen import gen_landmark, gen_synth
from dpagg.mechanisms import CountMechanism, SumMechanism
from dpagg.model import split_budget

LN3 = math.log(3)


@pytest.fixture(scope="session")
def synth_small():
    """D_synth[2000]: ~20k records, fast enough for per-test pipeline runs."""
    return gen_synth(2000, seed=11)


@pytest.fixture(scope="session")
def landmark_small():
    return gen_landmark(2000, seed=5)


@pytest.fixture
def count():
    return CountMechanism()


@pytest.fixture
def sum8():
    return SumMechanism(8.0)


@pytest.fixture
def budget64():
    return split_budget(LN3, 1e-5, 64)


ACCEPTANCE_LINES: dict[int, str] = {}


def record_verdict(number: int, ok: bool, detail: str) -> None:
    """Store the one-line verdict for an acceptance criterion."""
    ACCEPTANCE_LINES[number] = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, 11):
        terminalreporter.write_line(
            ACCEPTANCE_LINES.get(n, f"criterion {n:2d}: FAIL  (not evaluated)"))
