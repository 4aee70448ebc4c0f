from __future__ import annotations

import pytest

from fbsde_coupling.grid import TimeGrid, sample_paths


@pytest.fixture(scope="session")
def unit_bundle():
    """10^5 paths on a single cell of [0, 1]."""
    return sample_paths(TimeGrid(0.0, 1.0, 1), 1, 100_000, seed=101)


@pytest.fixture(scope="session")
def quarter_bundle():
    """10^5 paths on [0, 1] with four cells, so (0.25, 0.75] is grid aligned."""
    return sample_paths(TimeGrid(0.0, 1.0, 4), 1, 100_000, seed=202)


@pytest.fixture(scope="session")
def fine_bundle():
    """2 * 10^4 paths on [0, 1] with 64 cells."""
    return sample_paths(TimeGrid(0.0, 1.0, 64), 1, 20_000, seed=303)


ACCEPTANCE: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Collects one ``PASS``/``FAIL`` line per acceptance criterion."""
    return ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
