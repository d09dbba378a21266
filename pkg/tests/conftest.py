import numpy as np
import pytest

from qgeo_regime.embedding import make_random_operators
from qgeo_regime.pipeline import PanelData
from qgeo_regime.synthetic import planted_panel

ACCEPTANCE = {}


def record_acceptance(number, title, passed, detail=""):
    """Store one acceptance line; the terminal summary prints them in order."""
    status = "PASS" if passed is True else ("SKIP" if passed is None else "FAIL")
    ACCEPTANCE[number] = f"[{status}] {number}. {title}" + (f": {detail}" if detail else "")
    print(ACCEPTANCE[number])


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture(scope="session")
def ops8():
    return make_random_operators(8, 8, seed=42)


@pytest.fixture(scope="session")
def small_planted():
    """Three-window planted panel, short enough for per-test scoring."""
    return planted_panel(n_days=1000, n_windows=3, window_len=40, warmup=400, seed=7)


@pytest.fixture(scope="session")
def small_data(small_planted):
    return PanelData.from_panel(small_planted.panel)
