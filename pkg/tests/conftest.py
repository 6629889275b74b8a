import numpy as np
import pytest

from latentshift.world import WorldConfig, make_world

_CRITERIA = []


@pytest.fixture
def criterion():
    """Record a pass/fail line for an acceptance criterion."""

    def record(number, title, ok, detail=""):
        _CRITERIA.append((number, title, bool(ok), detail))
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, ok, detail in sorted(_CRITERIA, key=lambda c: c[0]):
        status = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"[{status}] {number:>2}. {title}: {detail}")


@pytest.fixture
def linear_world():
    return make_world(WorldConfig(d=32, m=3, seed=1))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
