import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from flatform.forms import BilinearFormField, Chart

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=15,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ACCEPTANCE = {}


def record(criterion: int, ok: bool, detail: str) -> None:
    line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[criterion] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])


def form(names, box, entries, base=None):
    return BilinearFormField(Chart(names, box, base), entries)


@pytest.fixture
def polar():
    return form(["r", "t"], [[1, 2], [0, 1]], [["1", "0"], ["0", "r^2"]])


@pytest.fixture
def sphere():
    return form(["th", "ph"], [[0.5, 2.5], [0, 1]], [["1", "0"], ["0", "sin(th)^2"]])


@pytest.fixture
def radial_away():
    return form(["x", "y"], [[1, 2], [1, 2]], [["4*x^2", "4*x*y"], ["4*x*y", "4*y^2"]])


@pytest.fixture
def radial_origin():
    return form(["x", "y"], [[-1, 1], [-1, 1]], [["4*x^2", "4*x*y"], ["4*x*y", "4*y^2"]])


@pytest.fixture
def height_area():
    return form(["x", "y"], [[-1, 1], [-1, 1]], [["1", "1+x^2"], ["-(1+x^2)", "0"]])


@pytest.fixture
def moser4():
    return form(list("xyzw"), [[-0.5, 0.5]] * 4,
                [["0", "1", "0.1*z", "0"], ["-1", "0", "0", "0"],
                 ["-0.1*z", "0", "0", "1"], ["0", "0", "-1", "0"]])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
