from __future__ import annotations

import numpy as np
import pytest
from hypothesis import settings

from parabolab.grid_domain import make_domain, make_grid
from parabolab.solver import discretize

settings.register_profile("lab", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("lab")


@pytest.fixture(scope="session")
def slab1():
    return make_domain("half_space_slab", {"n": 1})


@pytest.fixture(scope="session")
def cylinder1():
    return make_domain("straight_cylinder", {"n": 1, "r": 1.0, "T": 1.0})


@pytest.fixture(scope="session")
def cubes3():
    return make_domain("shrinking_cubes", {"levels": 3})


@pytest.fixture(scope="session")
def spike1():
    return make_domain("inner_spike", {"n": 1})


@pytest.fixture(scope="session")
def cylinder_disc(cylinder1):
    return discretize(cylinder1, make_grid(cylinder1, 1 / 16))


@pytest.fixture
def rng():
    return np.random.default_rng(0)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def record():
    """Log one PASS/FAIL line for an acceptance criterion, then assert it."""
    def _record(number: int, ok: bool, detail: str):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line
    return _record
