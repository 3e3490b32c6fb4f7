import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ealsrec.eals import TrainConfig, train
from ealsrec.evaluation import (
    EvalReport,
    evaluate_offline,
    evaluate_online,
    hit_ratio,
    ndcg,
    rank_of,
)
from ealsrec.ingest import build_dataset, split_chronological, split_leave_one_out
from ealsrec.model import FactorModel
from ealsrec.online import OnlineConfig
from ealsrec.synthetic import synthetic_interactions
from ealsrec.weighting import popularity_weights


def test_hand_cases():
    ranked = [7, 3, 9, 1]
    assert (hit_ratio(ranked, 7, 3), ndcg(ranked, 7, 3)) == (1, 1.0)
    assert (hit_ratio(ranked, 9, 3), ndcg(ranked, 9, 3)) == (1, 0.5)
    assert (hit_ratio(ranked, 1, 3), ndcg(ranked, 1, 3)) == (0, 0.0)
    assert ndcg([(7, 0.9), (3, 0.5)], 3, 2) == 1 / math.log2(3)


def test_rank_of_ties_by_id():
    scores = np.array([0.5, 0.9, 0.5, 0.1])
    assert [rank_of(scores, i) for i in range(4)] == [2, 1, 3, 4]
    assert rank_of(scores, 2, excluded=np.array([0])) == 2
    assert rank_of(scores, 0, excluded=np.array([0])) is None


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 4), min_size=1, max_size=25), st.data())
def test_rank_of_agrees_with_topk(raw, data):
    scores = np.array(raw, dtype=float)
    gt = data.draw(st.integers(0, len(scores) - 1))
    model = FactorModel(np.ones((1, 1)), scores[:, None])
    order = [i for i, _ in model.recommend_topk(0, len(scores))]
    assert rank_of(scores, gt) == order.index(gt) + 1


@pytest.fixture(scope="module")
def trained():
    raw = synthetic_interactions(120, 80, 1500, seed=0)
    data = build_dataset(raw)
    split = split_chronological(data, 0.1)
    weights = popularity_weights(split.train, c0=16, alpha=0.4)
    model, _ = train(split.train, weights, TrainConfig(K=8, max_iters=10))
    return split, weights, model


def test_offline_report(trained):
    split, _, model = trained
    rep = evaluate_offline(model, split, cutoff=20)
    assert len(rep.per_event) + rep.skipped == len(split.test)
    assert rep.ndcg <= rep.hr
    rows = [json.loads(x) for x in rep.to_jsonl().splitlines()]
    assert rows[-1]["type"] == "aggregate" and rows[-1]["hr"] == rep.hr
    assert evaluate_offline(model, split, cutoff=20).to_jsonl() == rep.to_jsonl()


def test_offline_does_not_touch_model(trained):
    split, _, model = trained
    P, Q = model.P.copy(), model.Q.copy()
    evaluate_offline(model, split, exclude_train=True)
    assert np.array_equal(P, model.P) and np.array_equal(Q, model.Q)


def test_exclude_train_never_hurts_rank(trained):
    split, _, model = trained
    a = evaluate_offline(model, split)
    b = evaluate_offline(model, split, exclude_train=True)
    for x, y in zip(a.per_event, b.per_event):
        if x["rank"] is not None and y["rank"] is not None:
            assert y["rank"] <= x["rank"]


def test_loo_offline_counts_every_user():
    data = build_dataset(synthetic_interactions(40, 30, 400, seed=1))
    split = split_leave_one_out(data)
    weights = popularity_weights(split.train, c0=8, alpha=0.5)
    model, _ = train(split.train, weights, TrainConfig(K=4, max_iters=5))
    rep = evaluate_offline(model, split)
    assert len(rep.per_event) == data.n_users and rep.skipped == 0


def test_online_leaves_model_alone_and_records_history(trained):
    split, weights, model = trained
    P = model.P.copy()
    rep = evaluate_online(model, split.train, weights, split.test, cutoff=20)
    assert np.array_equal(P, model.P)
    assert len(rep.per_event) == len(split.test)
    tr = split.train
    pairs = {(u, i) for u, i, _ in tr.entries()}
    seen_users = set(range(tr.n_users))
    for e in rep.per_event:
        u = e["u"]
        assert e["history_len"] == sum(1 for p in pairs if p[0] == u)
        assert e["new_user"] == (u not in seen_users)
        seen_users.add(u)
        pairs.add((u, e["i"]))
    assert rep.ndcg <= rep.hr


def test_online_zero_iters_is_order_free(trained):
    split, weights, model = trained
    cfg = OnlineConfig(online_iters=0)
    a = evaluate_online(model, split.train, weights, split.test, cfg)
    rng = np.random.default_rng(0)
    shuffled = [split.test[k] for k in rng.permutation(len(split.test))]
    b = evaluate_online(model, split.train, weights, shuffled, cfg)
    assert a.hr == pytest.approx(b.hr, abs=1e-15)
    assert a.ndcg == pytest.approx(b.ndcg, abs=1e-12)


def test_online_empty_stream(trained):
    split, weights, model = trained
    rep = evaluate_online(model, split.train, weights, [])
    assert rep.per_event == [] and rep.hr == 0.0


def test_breakdown_and_windows():
    rep = EvalReport(10, [
        {"hr": 1, "ndcg": 1.0, "history_len": 0},
        {"hr": 0, "ndcg": 0.0, "history_len": 0},
        {"hr": 1, "ndcg": 0.5, "history_len": 5},
    ])
    assert rep.breakdown() == [
        {"history_len": 0, "count": 2, "hr": 0.5, "ndcg": 0.5},
        {"history_len": 5, "count": 1, "hr": 1.0, "ndcg": 0.5},
    ]
    assert rep.breakdown(3)[-1]["history_len"] == 3
    assert rep.breakdown_csv().splitlines()[0] == "history_len,count,hr,ndcg"
    assert [w["end"] for w in rep.windowed(2)] == [2, 3]
