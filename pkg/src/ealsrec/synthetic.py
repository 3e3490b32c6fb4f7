"""Seeded power-law interaction generator for benchmarks and tests."""

from __future__ import annotations

import numpy as np

from .ingest import RawInteractions

POWER_LAW_EXPONENT = 1.0


def _zipf_weights(n: int, exponent: float, rng: np.random.Generator) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1) ** exponent
    return rng.permutation(w / w.sum())


def _arrivals(n: int, initial_share: float, horizon: int, rng: np.random.Generator) -> np.ndarray:
    t = rng.integers(0, horizon, n)
    t[rng.random(n) < initial_share] = 0
    return t


def synthetic_interactions(
    n_users: int,
    n_items: int,
    nnz: int,
    seed: int = 0,
    exponent: float = POWER_LAW_EXPONENT,
    n_groups: int = 20,
    affinity: float = 8.0,
    initial_share: float = 0.5,
    horizon: int = 1_000_000,
) -> RawInteractions:
    """Distinct ``(user, item, timestamp)`` records with power-law activity.

    Users and items each belong to one of ``n_groups`` taste groups and
    arrive over time: ``initial_share`` of them exist at t=0, the rest show
    up uniformly on ``[0, horizon)``. A record picks its user with Zipf
    weight, a time after the user's arrival, then an already launched item
    with probability proportional to Zipf popularity times ``affinity`` for
    a matching group. Keys are ``u<id>`` / ``i<id>``.
    """
    if nnz > n_users * n_items:
        raise ValueError("more interactions requested than cells available")
    rng = np.random.default_rng(seed)
    user_w = _zipf_weights(n_users, exponent, rng)
    item_w = _zipf_weights(n_items, exponent, rng)
    user_group = rng.integers(0, n_groups, n_users)
    item_group = rng.integers(0, n_groups, n_items)
    user_start = _arrivals(n_users, initial_share, horizon, rng)
    item_start = _arrivals(n_items, initial_share, horizon, rng)

    # items in launch order, so "launched by t" is a prefix
    by_launch = np.argsort(item_start, kind="stable")
    launch_sorted = item_start[by_launch]
    group_cum = []
    for g in range(n_groups):
        p = item_w[by_launch] * np.where(item_group[by_launch] == g, affinity, 1.0)
        group_cum.append(np.cumsum(p))

    seen: set[tuple[int, int]] = set()
    records: list[tuple[int, int, int]] = []
    counts = np.zeros(n_users, dtype=np.int64)
    while len(records) < nnz:
        batch = max(1024, 2 * (nnz - len(records)))
        users = rng.choice(n_users, size=batch, p=user_w)
        offsets = rng.random(batch)
        draws = rng.random(batch)
        for u, off, x in zip(users.tolist(), offsets.tolist(), draws.tolist()):
            t = int(user_start[u] + off * (horizon - user_start[u]))
            n_live = int(np.searchsorted(launch_sorted, t, side="right"))
            if n_live == 0 or counts[u] >= n_live:
                continue
            cum = group_cum[user_group[u]]
            k = min(int(np.searchsorted(cum, x * cum[n_live - 1], side="right")), n_live - 1)
            i = int(by_launch[k])
            if (u, i) in seen:
                continue
            seen.add((u, i))
            counts[u] += 1
            records.append((u, i, t))
            if len(records) == nnz:
                break
    return RawInteractions([(f"u{u}", f"i{i}", t) for u, i, t in records])
