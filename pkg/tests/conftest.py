import numpy as np
import pytest
from hypothesis import settings

from fastcharge import default_parameters
from fastcharge.plant import CellState, Plant, initialize

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")

T_REF = 298.15


@pytest.fixture(scope="session")
def params():
    return default_parameters()


@pytest.fixture(scope="session")
def plant(params):
    return Plant(params, "series")


@pytest.fixture(scope="session")
def plant_classical(params):
    return Plant(params, "classical")


@pytest.fixture(scope="session")
def rest_mid(params):
    """Uniform rest state at 50 % SOC and 25 degC."""
    return initialize(0.5, T_REF, params)


@pytest.fixture(scope="session")
def charged_state(params, plant):
    """Non-uniform state after 60 s at 5 A from 50 % SOC."""
    y = initialize(0.5, T_REF, params).vector()
    for _ in range(60):
        y = plant.step_vector(y, 5.0, 14.0, T_REF, 1.0)
    return CellState.from_vector(y, params)


def rel_err(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-300))


ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Collects one result line per acceptance criterion for the terminal summary."""

    def record(label, ok, detail):
        line = f"{label}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
