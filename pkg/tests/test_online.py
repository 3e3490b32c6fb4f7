import threading

import numpy as np
import pytest

from ealsrec.eals import TrainConfig, train
from ealsrec.ingest import InteractionDataset
from ealsrec.model import weighted_gram
from ealsrec.online import OnlineConfig, OnlineUpdater, ingest_interaction
from ealsrec.weighting import popularity_weights

from conftest import random_instance


def _trained(seed=0, m=40, n=30):
    rng = np.random.default_rng(seed)
    mask = rng.random((m, n)) < 0.15
    mask[:, 0] = True
    u, i = np.nonzero(mask)
    data = InteractionDataset(m, n, u, i, rng.integers(0, 100, len(u)))
    weights = popularity_weights(data, c0=8.0, alpha=0.5)
    model, _ = train(data, weights, TrainConfig(K=4, max_iters=10, seed=seed))
    return data, weights, model


def _user_loss(up, u, lam):
    # local objective of user u, over every item
    w = up.c.copy()
    r = np.zeros(up.n_items)
    for e in up.user_entries[u]:
        i = int(up._e_item.buf[e])
        w[i], r[i] = up._w.buf[e], up._r.buf[e]
    err = r - up.Q @ up.P[u]
    return float(np.sum(w * err * err) + lam * up.P[u] @ up.P[u])


def test_ingest_touches_only_its_rows():
    data, weights, model = _trained()
    up = OnlineUpdater(model, data, weights)
    rng = np.random.default_rng(1)
    for _ in range(50):
        u, i = int(rng.integers(up.n_users)), int(rng.integers(up.n_items))
        P0, Q0 = up.P.copy(), up.Q.copy()
        up.ingest(u, i)
        keep_u = np.arange(up.n_users) != u
        keep_i = np.arange(up.n_items) != i
        assert np.array_equal(P0[keep_u], up.P[keep_u])
        assert np.array_equal(Q0[keep_i], up.Q[keep_i])


def test_caches_stay_in_sync():
    data, weights, model = _trained(2)
    up = OnlineUpdater(model, data, weights)
    rng = np.random.default_rng(3)
    for _ in range(200):
        u = int(rng.integers(up.n_users + 1))
        i = int(rng.integers(up.n_items + 1))
        up.ingest(u, i)
    up.model().check_invariants(weights.extended(up.n_items), cache_tol=1e-8)
    direct = np.einsum("ek,ek->e", up.P[up._e_user.view], up.Q[up._e_item.view])
    np.testing.assert_allclose(up.pred, direct, rtol=0, atol=1e-10)


def test_user_loss_does_not_increase():
    data, weights, model = _trained(4)
    up = OnlineUpdater(model, data, weights)
    lam = up.config.lam
    rng = np.random.default_rng(5)
    for _ in range(30):
        u, i = int(rng.integers(up.n_users)), int(rng.integers(up.n_items))
        # add the entry without updating, then check the user step alone
        cfg = up.config
        up.config = OnlineConfig(w_new=cfg.w_new, online_iters=0, lam=lam)
        up.ingest(u, i)
        up.config = cfg
        before = _user_loss(up, u, lam)
        up._update_user(u)
        assert _user_loss(up, u, lam) <= before + 1e-12 * max(1.0, before)


def test_repeat_reweights_instead_of_duplicating():
    data, weights, model = _trained()
    up = OnlineUpdater(model, data, weights, OnlineConfig(w_new=4.0))
    u, i = 0, 0
    assert up.repeat_interaction_policy(u, i) == "reweight"
    nnz = up.nnz
    up.ingest(u, i, t=999)
    assert up.nnz == nnz
    assert up.entry(u, i)["w"] == 4.0 and up.entry(u, i)["t"] == 999
    up.config = OnlineConfig(w_new=2.0)
    up.ingest(u, i, t=1000)
    assert up.entry(u, i)["w"] == 4.0


def test_new_ids_must_be_next():
    data, weights, model = _trained()
    up = OnlineUpdater(model, data, weights)
    with pytest.raises(IndexError):
        up.ingest(up.n_users + 1, 0)
    up.ingest(up.n_users, up.n_items)
    assert up.c[-1] == 0.0


def test_ingest_by_keys():
    data, weights, model = _trained()
    up = OnlineUpdater(model, data, weights)
    u, i = ingest_interaction(up, "newcomer", "fresh", 5)
    assert (u, i) == (data.n_users, data.n_items)
    assert ingest_interaction(up, "newcomer", "fresh", 6) == (u, i)
    assert up.history_len(u) == 1


def test_new_user_learns_toward_its_item():
    data, weights, model = _trained(6)
    up = OnlineUpdater(model, data, weights, OnlineConfig(init_scale=0.0))
    u = up.n_users
    up.ingest(u, 3)
    assert up.predict(u, 3) > 0
    assert up.predict(u, 3) > np.median(up.scores(u))


def test_online_iters_zero_only_records():
    data, weights, model = _trained()
    up = OnlineUpdater(model, data, weights, OnlineConfig(online_iters=0))
    P0 = up.P.copy()
    up.ingest(1, 2)
    assert np.array_equal(P0, up.P)


def test_periodic_recompute():
    data, weights, model = _trained()
    up = OnlineUpdater(model, data, weights, OnlineConfig(recompute_every=5))
    for k in range(5):
        up.ingest(k, k)
    assert np.array_equal(up.Sp, weighted_gram(up.P))
    assert np.array_equal(up.Sq, weighted_gram(up.Q, up.c))


def test_concurrent_readers_see_whole_rows():
    data, weights, model = _trained()
    up = OnlineUpdater(model, data, weights)
    errors = []

    def reader():
        for _ in range(200):
            try:
                s = up.scores(0)
                assert np.all(np.isfinite(s))
            except Exception as exc:  # pragma: no cover
                errors.append(exc)

    t = threading.Thread(target=reader)
    t.start()
    for k in range(200):
        up.ingest(k % up.n_users, k % up.n_items)
    t.join()
    assert not errors


def test_rejects_mismatched_inputs():
    data, weights, model = random_instance(0)
    other, _, _ = random_instance(1)
    if (other.n_users, other.n_items) != (data.n_users, data.n_items):
        with pytest.raises(ValueError):
            OnlineUpdater(model, other, weights)
    with pytest.raises(ValueError):
        OnlineConfig(w_new=0)
