"""Shared fixtures: small ensembles reused across test modules.

Session scope keeps the suite fast; every consumer treats the arrays as
read-only (simulation outputs are returned with writeable=False views
anyway where it matters, and tests copy before mutating).
"""

import numpy as np
import pytest

from condexit import (
    CoinFlipControl,
    DomainGeometry,
    TimeGrid,
    simulate_ensemble,
    zero_control,
)


# Acceptance tests record one verdict line per criterion here; the hook
# below replays them in the terminal summary so a plain `pytest -v` run
# always shows the per-criterion outcome even with output capture on.
_CRITERION_LINES = []


@pytest.fixture
def criterion():
    def record(index: int, name: str, passed: bool, detail: str):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {index}: {name} ({detail})"
        _CRITERION_LINES.append(line)
        print(line)
        assert passed, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERION_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERION_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def unit_interval():
    return DomainGeometry.interval(-1.0, 1.0)


@pytest.fixture(scope="session")
def unit_ball_2d():
    return DomainGeometry.ball([0.0, 0.0], 1.0)


@pytest.fixture(scope="session")
def small_grid():
    return TimeGrid(horizon=1.0, dt=0.01)


@pytest.fixture(scope="session")
def zero_ensemble(unit_interval, small_grid):
    """Driftless ensemble on (-1,1), 4000 particles, dt=0.01."""
    return simulate_ensemble(
        zero_control(),
        unit_interval,
        small_grid,
        x0=np.zeros(1),
        n_particles=4000,
        seed=101,
    )


@pytest.fixture(scope="session")
def coin_ensemble(unit_interval, small_grid):
    """Coin-flip drift (scale 1) on (-1,1), 4000 particles."""
    return simulate_ensemble(
        CoinFlipControl(scale=1.0),
        unit_interval,
        small_grid,
        x0=np.zeros(1),
        n_particles=4000,
        seed=202,
    )
