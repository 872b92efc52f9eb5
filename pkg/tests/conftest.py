import sys

import numpy as np
import pytest

from buir.data import SplitConfig, from_pairs, make_planted_blocks, split_per_user


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def toy_graph():
    """4 users x 4 items, every node connected."""
    edges = [(0, 0), (0, 1), (1, 1), (1, 2), (2, 2), (2, 3), (3, 0), (3, 3), (0, 3)]
    u, v = zip(*edges)
    return from_pairs(u, v, 4, 4)


@pytest.fixture(scope="session")
def planted_split():
    data = make_planted_blocks(60, 80, 2, 0.3, seed=3)
    return split_per_user(data, SplitConfig(0.5, seed=3))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.TITLES):
        if n in results:
            ok, detail = results[n]
            terminalreporter.write_line(f"criterion {n:2d} [{'PASS' if ok else 'FAIL'}] {mod.TITLES[n]}: {detail}")
        else:
            terminalreporter.write_line(f"criterion {n:2d} [FAIL] {mod.TITLES[n]}: did not complete")
