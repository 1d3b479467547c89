from pathlib import Path

import numpy as np
import pytest

from edgesparql.cost import ProblemInstance

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def random_instance(rng: np.random.Generator, N: int, K: int, p_elig: float = 0.5) -> ProblemInstance:
    """Random instance with mixed eligibility; every pair is linked so any e is valid."""
    c = rng.uniform(0.5, 20.0, N)
    w = rng.uniform(0.0, 10.0, N)
    e = rng.random((N, K)) < p_elig
    rate = rng.uniform(1.0, 20.0, (N, K))
    rc = rng.uniform(0.2, 3.0, N)
    F = rng.uniform(5.0, 60.0, K)
    return ProblemInstance.from_arrays(c, w, e, rate, rc, F)


@pytest.fixture
def scenarios_dir() -> Path:
    return SCENARIOS


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(RESULTS):
        ok, detail = RESULTS[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}")
