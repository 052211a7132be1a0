from pathlib import Path

import numpy as np
import pytest

from cft2nn.graph import Graph

ROOT = Path(__file__).resolve().parents[1]
MUTAG_DIR = ROOT / "data" / "MUTAG"


def random_graph(rng, n_max=10, n_min=1, p=None):
    n = int(rng.integers(n_min, n_max + 1))
    p = rng.uniform(0.1, 0.7) if p is None else p
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(len(iu)) < p
    return Graph.from_edges(n, np.stack([iu[keep], ju[keep]], axis=1), rng.normal(size=(n, 3)))


def path_graph(n):
    return Graph.from_edges(n, [(i, i + 1) for i in range(n - 1)])


def cycle_graph(n):
    return Graph.from_edges(n, [(i, (i + 1) % n) for i in range(n)])


def triangle():
    return cycle_graph(3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def mutag_dir():
    if not (MUTAG_DIR / "MUTAG_A.txt").is_file():
        pytest.skip("MUTAG data not present")
    return MUTAG_DIR


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
