import numpy as np
import pytest

from l2m.camera import Intrinsics


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def k64():
    return Intrinsics(50.0, 50.0, 31.5, 31.5, 64, 64)


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion; echoed in the terminal summary."""
    def record(number, title, passed, elapsed, bound, detail=""):
        status = "PASS" if passed else "FAIL"
        line = f"[{status}] criterion {number}: {title} ({elapsed:.2f}s / {bound:g}s){' ' + detail if detail else ''}"
        ACCEPTANCE_LINES.append(line)
        print(line)
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
