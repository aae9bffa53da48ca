import copy
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from rlbranch import build_model, malthusian  # noqa: E402

EXPBASE = {
    "alpha": {"kind": "constant", "value": 2},
    "offspring": {"kind": "deterministic", "n": 1},
    "lifetime": {"kind": "exponential", "rate": 1},
    "f": {"kind": "one"},
}
EXPPOIS = {**EXPBASE, "offspring": {"kind": "poisson", "mean": 1}}
GEOM_SUB = {
    "alpha": {"kind": "constant", "value": 1},
    "offspring": {"kind": "geometric", "mean": 0.4},
    "lifetime": {"kind": "exponential", "rate": 1},
    "f": {"kind": "one"},
}
ZERO_RATE = {**EXPBASE, "alpha": {"kind": "constant", "value": 0}}


def config(base, **over):
    doc = copy.deepcopy(base)
    doc.update(over)
    return doc


@pytest.fixture(scope="session")
def expbase():
    return build_model(EXPBASE)


@pytest.fixture(scope="session")
def exppois():
    return build_model(EXPPOIS)


@pytest.fixture(scope="session")
def geom_sub():
    return build_model(GEOM_SUB)


@pytest.fixture(scope="session")
def zero_rate():
    return build_model(ZERO_RATE)


@pytest.fixture(scope="session")
def sol_base(expbase):
    return malthusian(expbase)


@pytest.fixture(scope="session")
def sol_pois(exppois):
    return malthusian(exppois)


# ---------------------------------------------------------------------------
# acceptance criteria: one line per criterion at the end of the run

_ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    def record(number: int, ok: bool, detail: str):
        _ACCEPTANCE[number] = (bool(ok), detail)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
