import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from crossbred.branches import decompose_to_branches, evaluate_branch_stats  # noqa: E402
from crossbred.dataset import Dataset  # noqa: E402
from crossbred.forest import Forest, ForestConfig, fit_tree  # noqa: E402
from crossbred.modelfile import ModelFile  # noqa: E402
from crossbred.predict import build_fallback  # noqa: E402

DATA_DIR = Path(__file__).parent / "data"
SEIZURE_FIXTURE = DATA_DIR / "seizure_fixture.csv"

_acceptance_results = []


@pytest.fixture
def six_points():
    x = np.array([[1.0], [2.0], [3.0], [10.0], [11.0], [12.0]])
    return Dataset(x, np.array([0, 0, 0, 1, 1, 1]), n_classes=2)


def six_point_forest(d):
    """A one-tree forest grown on every row of ``d`` (identity bootstrap)."""
    config = ForestConfig(n_trees=1, mtry=1, seed=0)
    tree = fit_tree(d, config, 0)
    return Forest((tree,), config, d.n_features, d.n_classes, (np.arange(d.n_samples),))


@pytest.fixture
def six_point_model(six_points):
    forest = six_point_forest(six_points)
    bs = evaluate_branch_stats(decompose_to_branches(forest), six_points, "full")
    return ModelFile(forest, bs, build_fallback(six_points, "majority"))


def pytest_runtest_makereport(item, call):
    if item.get_closest_marker("acceptance") is None:
        return
    if call.when == "call" or (call.when == "setup" and call.excinfo is not None):
        if call.excinfo is None:
            outcome = "PASS"
        elif call.excinfo.errisinstance(pytest.skip.Exception):
            outcome = "SKIP"
        else:
            outcome = "FAIL"
        doc = (item.function.__doc__ or item.name).strip().splitlines()[0]
        _acceptance_results.append((outcome, doc))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_results:
        return
    terminalreporter.section("acceptance criteria")
    for outcome, doc in _acceptance_results:
        terminalreporter.write_line(f"{outcome:4}  {doc}")
