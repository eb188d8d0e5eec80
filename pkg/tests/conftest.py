import numpy as np
import pytest
from hypothesis import strategies as st

from egmn.distribution import EgmParams


def random_params(rng, k_max=12, lam=(0.05, 5.0), mu=(0.5, 120.0), var=(0.01, 400.0), k=None):
    """Random valid mixture in the ranges used by the acceptance checks."""
    if k is None:
        k = int(rng.integers(0, k_max + 1))
    w = rng.dirichlet(np.ones(k + 1))
    return EgmParams(
        rng.uniform(*lam), rng.uniform(*mu, size=k), rng.uniform(*var, size=k), w
    )


@st.composite
def egm_params(draw, k_max=6):
    seed = draw(st.integers(0, 2**32 - 1))
    return random_params(np.random.default_rng(seed), k_max=k_max)


@pytest.fixture
def mixed():
    """Half exponential(1), half N(2, 1)."""
    return EgmParams(1.0, [2.0], [1.0], [0.5, 0.5])


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line per acceptance criterion; shown in the terminal summary."""

    def record(number: int, passed: bool, detail: str):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        request.config.stash.setdefault(_ACCEPTANCE, []).append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
