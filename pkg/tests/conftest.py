import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from covlab.data import SyntheticMarketSpec, generate_synthetic  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def two_factor_market():
    """p=20, K=2, T=240 monthly-scale market with diagonal errors."""
    spec = SyntheticMarketSpec(p=20, T=240, K=2, factor_cov=0.0016 * np.eye(2),
                               error_scale=0.05, drift=0.008, seed=11)
    return generate_synthetic(spec)


@pytest.fixture
def small_market():
    """Tiny panel for fast end-to-end runs: p=12, T=60, K=2."""
    spec = SyntheticMarketSpec(p=12, T=60, K=2, factor_cov=0.0016 * np.eye(2),
                               error_scale=0.04, drift=0.01, seed=5)
    return generate_synthetic(spec)


def write_csv(path, header, rows):
    lines = [",".join(header)] + [",".join(str(x) for x in r) for r in rows]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
