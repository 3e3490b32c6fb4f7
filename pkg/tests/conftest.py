import numpy as np
import pytest

from ealsrec.ingest import InteractionDataset
from ealsrec.model import init_model
from ealsrec.weighting import confidence_vector, item_popularity


def random_instance(seed, max_m=30, max_n=30, max_k=8, density=0.2, alpha=None, c0=None, cover_items=False):
    """Random dataset, popularity weights and a model with fresh caches."""
    rng = np.random.default_rng(seed)
    m = int(rng.integers(2, max_m + 1))
    n = int(rng.integers(2, max_n + 1))
    k = int(rng.integers(1, max_k + 1))
    mask = rng.random((m, n)) < density
    mask[0, 0] = True
    if cover_items:
        for i in np.flatnonzero(~mask.any(axis=0)):
            mask[rng.integers(m), i] = True
    users, items = np.nonzero(mask)
    data = InteractionDataset(m, n, users, items, rng.integers(0, 1000, len(users)))
    if alpha is None:
        alpha = float(rng.choice([0.0, 0.5, 1.0]))
    if c0 is None:
        c0 = float(rng.uniform(0.5, 20.0))
    weights = confidence_vector(item_popularity(data), c0, alpha)
    model = init_model(m, n, k, seed=seed, scale=rng.uniform(0.05, 1.0), weights=weights, train=data)
    return data, weights, model


@pytest.fixture
def toy():
    """One user, two items, (u0, i0) observed; c = [0.5, 0]; q = [2, 3]; p = 0.1."""
    from ealsrec.model import FactorModel
    from ealsrec.weighting import ConfidenceWeights

    data = InteractionDataset(1, 2, [0], [0], [0])
    weights = ConfidenceWeights(np.array([0.5, 0.0]), 0.5, 1.0)
    model = FactorModel(np.array([[0.1]]), np.array([[2.0], [3.0]]))
    model.recompute_caches(weights)
    model.refresh_prediction_cache(data)
    return data, weights, model


# one line per acceptance criterion, shown at the end of the run
ACCEPTANCE_LINES: list[str] = []


def record_criterion(number, name, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2} {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
