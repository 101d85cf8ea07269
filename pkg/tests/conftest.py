import numpy as np
import pytest

from hiertmle.data import HierarchicalDataset
from hiertmle.simulate import generate, preset


def make_dataset(a, y_rows, e=None, w_rows=None, bounds=(0.0, 1.0), alpha_rows=None):
    """Flat dataset from per-community lists of outcomes (and optional covariates)."""
    J = len(a)
    sizes = [len(r) for r in y_rows]
    group = np.repeat(np.arange(J), sizes)
    y = np.concatenate([np.asarray(r, dtype=float) for r in y_rows])
    e = np.zeros((J, 1)) if e is None else np.asarray(e, dtype=float).reshape(J, -1)
    if w_rows is None:
        w = np.zeros((y.size, 1))
    else:
        w = np.concatenate([np.asarray(r, dtype=float).reshape(len(r), -1) for r in w_rows])
    if alpha_rows is None:
        alpha = 1.0 / np.asarray(sizes, dtype=float)[group]
    else:
        alpha = np.concatenate([np.asarray(r, dtype=float) for r in alpha_rows])
    ids = tuple(f"c{j}" for j in range(J))
    return HierarchicalDataset(ids, e, np.asarray(a, dtype=float), w, y, alpha, group, bounds)


@pytest.fixture(scope="session")
def binary_ds():
    return generate(preset("well_specified", J=120, N=8, seed=11))


@pytest.fixture(scope="session")
def continuous_ds():
    return generate(preset("continuous", J=150, N=6, seed=12))


@pytest.fixture(scope="session")
def single_ds():
    return generate(preset("single", J=150, seed=13))


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
