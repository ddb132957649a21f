import sys

import numpy as np
import pytest
from hypothesis import strategies as st

from conslaw_particles.cli import packaged_scenarios
from conslaw_particles.scenario import load_scenario


@pytest.fixture(scope="session")
def scenarios():
    paths = packaged_scenarios()
    return {name: load_scenario(p) for name, p in paths.items()}


def sorted_particles(min_size=3, max_size=12, lo=-2.0, hi=2.0, min_gap=1e-3):
    """Strategy for strictly increasing particle arrays with a minimum gap."""

    def build(vals):
        x = np.unique(np.round(np.array(vals), 6))
        keep = np.concatenate(([True], np.diff(x) > min_gap))
        return x[keep]

    return (st.lists(st.floats(lo, hi, allow_nan=False), min_size=min_size, max_size=max_size)
            .map(build).filter(lambda x: x.size >= min_size))


def random_config(rng, n, lo=-2.0, hi=2.0):
    """Sorted particles with both hull endpoints pinned to ``lo`` and ``hi``."""
    inner = np.sort(rng.uniform(lo, hi, n - 1))
    x = np.concatenate(([lo], inner, [hi]))
    gaps = np.diff(x)
    if np.any(gaps <= 1e-9):
        return random_config(rng, n, lo, hi)
    return x


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for text in mod.summary_lines():
            terminalreporter.write_line(text)
