import numpy as np
import pytest

from treedist import ProbabilityTree

ACCEPTANCE_LINES: list[str] = []


def chain(values, dim=1):
    """Single-path tree with the given per-stage outcomes."""
    n = len(values)
    parents = [None] + list(range(n - 1))
    return ProbabilityTree.from_parents(parents, np.array(values, dtype=float).reshape(n, dim), [1.0] * n)


def fan(root, points, probs):
    """Two-stage tree: a root and one leaf per point."""
    parents = [None] + [0] * len(points)
    outcomes = np.array([root] + list(points), dtype=float).reshape(len(points) + 1, -1)
    return ProbabilityTree.from_parents(parents, outcomes, [1.0] + list(probs))


def three_stage_tree():
    """Root with two stage-2 nodes having 2 and 3 leaves."""
    parents = [None, 0, 0, 1, 1, 2, 2, 2]
    outcomes = [[0.0], [1.0], [2.0], [0.5], [1.5], [0.5], [2.5], [3.0]]
    probs = [1.0, 0.4, 0.6, 0.1, 0.3, 0.2, 0.15, 0.25]
    return ProbabilityTree.from_parents(parents, np.array(outcomes), probs)


@pytest.fixture
def tree3():
    return three_stage_tree()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
