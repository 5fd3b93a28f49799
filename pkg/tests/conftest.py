import numpy as np
import pytest

from qbstab.models import three_state_qb, two_state
from qbstab.certify import sweep_epsilon

TWO_STATE_GRID = np.linspace(0.01, 0.8, 20)
THREE_STATE_GRID = np.linspace(0.01, 14.0, 20)


@pytest.fixture(scope="session")
def two_state_sweep():
    """20-point uniform analysis sweep of the planar benchmark (shared)."""
    return sweep_epsilon(two_state(), TWO_STATE_GRID, None, "analysis")


@pytest.fixture(scope="session")
def three_state_sweep():
    """20-point uniform synthesis sweep of the 3-state benchmark (shared)."""
    return sweep_epsilon(three_state_qb(), THREE_STATE_GRID, None, "synthesis")


def criterion_line(tag: str, ok: bool, detail: str) -> None:
    """One visible pass/fail line per acceptance criterion (run with -s)."""
    print(f"\n[{'PASS' if ok else 'FAIL'}] {tag}: {detail}")
