import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mftraffic.mass import MassTrajectory
from mftraffic.scenario import unit_scenario
from mftraffic.values import value_field

DATA = Path(__file__).parent / "data"

settings.register_profile("default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def unit():
    return unit_scenario()


@pytest.fixture(scope="session")
def unit_field(unit):
    return value_field(MassTrajectory.zeros(unit.grid), unit)


@pytest.fixture(scope="session")
def oracle_cases():
    return json.loads((DATA / "oracle_cases.json").read_text())


def random_mass(scenario, rng, amplitude=None):
    """A smooth random trajectory inside X: zero at t=0, bounded range and slope."""
    t = scenario.grid.nodes
    amp = scenario.rho_max / 4 if amplitude is None else amplitude
    vals = []
    for _ in range(5):
        w = rng.uniform(0.5, 3.0)
        c = rng.uniform(0.1, 1.0) * amp / 2
        vals.append(c * (1 - np.cos(w * t)))
    return MassTrajectory(scenario.grid, np.array(vals))


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
