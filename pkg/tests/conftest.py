import numpy as np
import pytest

from reformchannels.data import Dataset
from reformchannels.dgp import DgpConfig, simulate


@pytest.fixture(scope="session")
def dgp_small():
    """Default design, n=2000, 12 months."""
    return simulate(DgpConfig(n=2000, seed=11, horizon=12))


@pytest.fixture(scope="session")
def dgp_medium():
    return simulate(DgpConfig(n=6000, seed=5, horizon=24))


def make_dataset(d, t, X, Y=None, w=None, names=None, **kw):
    d = np.asarray(d, dtype=np.int64)
    n = len(d)
    X = np.asarray(X, dtype=float).reshape(n, -1)
    Y = np.zeros((n, 1)) if Y is None else np.asarray(Y, dtype=float).reshape(n, -1)
    return Dataset(
        ids=np.array([f"i{k}" for k in range(n)], dtype=object),
        d=d,
        t=np.asarray(t, dtype=np.int64),
        w=np.ones(n) if w is None else np.asarray(w, dtype=float),
        X=X,
        Y=Y,
        covariate_names=tuple(names or (f"x{k}" for k in range(X.shape[1]))),
        **kw,
    )


def replicated_cells_dataset(Y_by_cell, n_per_cell=25, seed=0):
    """Every cell shares one covariate block, so all propensities are constant."""
    rng = np.random.default_rng(seed)
    block = rng.normal(size=(n_per_cell, 2))
    planned = rng.integers(60, 900, size=n_per_cell)
    d, t, X, Y, ptype, days = [], [], [], [], [], []
    for (dd, tt), y in Y_by_cell.items():
        d += [dd] * n_per_cell
        t += [tt] * n_per_cell
        X.append(block)
        Y.append(y)
        ptype += ["short_training" if dd else ""] * n_per_cell
        days.append(planned if dd else np.zeros(n_per_cell, dtype=int))
    days = np.concatenate(days)
    return make_dataset(d, t, np.vstack(X), Y=np.vstack(Y),
                        programme_type=np.array(ptype, dtype=object),
                        planned_days=days, actual_days=days)


# Acceptance criterion outcomes: number -> {part label: (passed, detail)}.
ACCEPTANCE_RESULTS: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        parts = ACCEPTANCE_RESULTS[number].values()
        ok = all(p for p, _ in parts)
        detail = "; ".join(d for _, d in parts)
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
