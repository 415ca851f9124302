import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ftla.bench import SYSTEMS, make_system
from ftla.lyap import DegenerateSpectrumWarning

settings.register_profile(
    "ftla",
    deadline=None,
    max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("ftla")


@pytest.fixture(autouse=True)
def _quiet_degenerate():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateSpectrumWarning)
        yield


@pytest.fixture(scope="session")
def systems():
    return {name: make_system(name) for name in SYSTEMS}


def sample_points(system, count, seed=0):
    """Uniform samples from a system's default box (a unit box around a
    degenerate axis)."""
    rng = np.random.default_rng(seed)
    lo = np.array([b[0] for b in system.bounds], dtype=float)
    hi = np.array([b[1] for b in system.bounds], dtype=float)
    flat = hi - lo < 1e-12
    lo[flat] -= 1.0
    hi[flat] += 1.0
    return lo + (hi - lo) * rng.random((count, system.n))


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
