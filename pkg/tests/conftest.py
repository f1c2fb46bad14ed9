from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from wmplab.mesh import Mesh

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

_CRITERIA = []


def record_criterion(number, ok, detail):
    _CRITERIA.append((number, bool(ok), detail))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, detail in sorted(_CRITERIA, key=lambda c: c[0]):
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def ref_tet():
    return Mesh(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1.0]]), np.array([[0, 1, 2, 3]]))


@pytest.fixture
def regular_tet():
    v = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1.0]]) / (2 * np.sqrt(2))
    return Mesh(v, np.array([[0, 1, 2, 3]]))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
