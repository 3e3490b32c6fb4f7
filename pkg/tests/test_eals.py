import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ealsrec.eals import (
    SingularUpdateError,
    TrainConfig,
    naive_update_item_factor,
    naive_update_user_factor,
    objective_fast,
    objective_naive,
    sweep,
    train,
    update_item_factor,
    update_user_factor,
)
from ealsrec.ingest import InteractionDataset
from ealsrec.model import FactorModel
from ealsrec.weighting import ConfidenceWeights

from conftest import random_instance


def test_toy_user_update(toy):
    data, weights, model = toy
    # w_00 = 1 on q=2, c_1 = 0 mutes item 1: p = 2 / 4
    assert update_user_factor(model, 0, 0, data, weights, lam=0.0) == 0.5
    assert model.P[0, 0] == 0.5
    assert model.pred[0] == 1.0


def test_toy_objective_reaches_zero(toy):
    data, weights, model = toy
    update_user_factor(model, 0, 0, data, weights, lam=0.0)
    model.recompute_caches(weights)
    assert objective_fast(model, data, weights, 0.0) == 0.0
    assert objective_naive(model, data, weights, 0.0) == 0.0


def test_toy_item_update(toy):
    data, weights, model = toy
    model.P[0, 0] = 0.5
    model.recompute_caches(weights).refresh_prediction_cache(data)
    # q_0 minimises (1 - 0.5 q)^2 -> 2
    assert update_item_factor(model, 0, 0, data, weights, lam=0.0) == pytest.approx(2.0, rel=1e-15)


def test_singular_update_raises():
    data = InteractionDataset(2, 2, [0], [0], [0])
    weights = ConfidenceWeights(np.array([0.0, 0.0]), 1.0, 0.0)
    model = FactorModel(np.zeros((2, 1)), np.zeros((2, 1)))
    model.refresh_prediction_cache(data)
    with pytest.raises(SingularUpdateError):
        update_user_factor(model, 1, 0, data, weights, lam=0.0)
    with pytest.raises(SingularUpdateError):
        naive_update_user_factor(model, 1, 0, data, weights, lam=0.0)


def test_lambda_must_be_positive():
    with pytest.raises(ValueError):
        TrainConfig(lam=0.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(1e-4, 1.0))
def test_fast_update_matches_naive(seed, lam):
    data, weights, model = random_instance(seed)
    rng = np.random.default_rng(seed)
    for _ in range(10):
        f = int(rng.integers(model.K))
        if rng.random() < 0.5:
            u = int(rng.integers(model.n_users))
            want = naive_update_user_factor(model, u, f, data, weights, lam)
            got = update_user_factor(model, u, f, data, weights, lam)
            model.Sp = model.P.T @ model.P
        else:
            i = int(rng.integers(model.n_items))
            want = naive_update_item_factor(model, i, f, data, weights, lam)
            got = update_item_factor(model, i, f, data, weights, lam)
            model.Sq = (model.Q * weights.c[:, None]).T @ model.Q
        assert got == pytest.approx(want, rel=1e-10, abs=1e-13)
    model.check_invariants(weights, data, pred_tol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(1e-4, 1.0))
def test_objective_identity(seed, lam):
    data, weights, model = random_instance(seed)
    assert objective_fast(model, data, weights, lam) == pytest.approx(objective_naive(model, data, weights, lam), rel=1e-9)


@pytest.mark.parametrize("seed", range(8))
def test_update_is_stationary(seed):
    # central difference of the objective at the new coordinate vanishes
    data, weights, model = random_instance(seed)
    lam, h = 0.05, 1e-6
    rng = np.random.default_rng(seed)
    u, f = int(rng.integers(model.n_users)), int(rng.integers(model.K))
    update_user_factor(model, u, f, data, weights, lam)
    i, g = int(rng.integers(model.n_items)), int(rng.integers(model.K))
    for X, idx, k in ((model.P, u, f), (model.Q, i, g)):
        if X is model.Q:
            model.Sp = model.P.T @ model.P
            update_item_factor(model, i, g, data, weights, lam)
        x0 = X[idx, k]
        X[idx, k] = x0 + h
        up = objective_naive(model, data, weights, lam)
        X[idx, k] = x0 - h
        down = objective_naive(model, data, weights, lam)
        X[idx, k] = x0
        scale = max(1.0, objective_naive(model, data, weights, lam))
        assert abs(up - down) / (2 * h) <= 1e-4 * scale


@pytest.mark.parametrize("seed", range(5))
def test_sweeps_descend_and_keep_caches(seed):
    data, weights, model = random_instance(seed)
    prev = objective_fast(model, data, weights, 0.01)
    for _ in range(5):
        sweep(model, data, weights, 0.01)
        cur = objective_fast(model, data, weights, 0.01)
        assert cur <= prev + 1e-10 * abs(prev)
        prev = cur
    model.check_invariants(weights, data)


def test_train_is_deterministic_and_traced(tmp_path):
    data, weights, _ = random_instance(3)
    cfg = TrainConfig(K=4, max_iters=15, rel_tol=0.0, seed=7)
    m1, tr1 = train(data, weights, cfg)
    m2, tr2 = train(data, weights, cfg)
    assert np.array_equal(m1.P, m2.P) and np.array_equal(m1.Q, m2.Q)
    assert tr1.n_sweeps == 15 and tr1.objectives == tr2.objectives
    assert all(b <= a + 1e-12 * abs(a) for a, b in zip(tr1.objectives, tr1.objectives[1:]))
    tr1.save(tmp_path / "trace.jsonl")
    rows = [json.loads(line) for line in (tmp_path / "trace.jsonl").read_text().splitlines()]
    assert [r["iter"] for r in rows] == list(range(16))


def test_train_stops_on_tolerance():
    data, weights, _ = random_instance(4)
    _, trace = train(data, weights, TrainConfig(K=3, max_iters=500, rel_tol=1e-3))
    assert trace.n_sweeps < 500
    a, b = trace.objectives[-2:]
    assert abs(b - a) / abs(a) < 1e-3


def test_threads_give_identical_sweep():
    data, weights, model = random_instance(11, max_m=30, max_n=30)
    other = model.copy()
    sweep(model, data, weights, 0.01, threads=1)
    sweep(other, data, weights, 0.01, threads=3)
    assert np.array_equal(model.P, other.P) and np.array_equal(model.Q, other.Q)


def test_sweep_rejects_stale_prediction_cache():
    data, weights, model = random_instance(0)
    model.pred = np.zeros(0)
    with pytest.raises(ValueError):
        sweep(model, data, weights)
