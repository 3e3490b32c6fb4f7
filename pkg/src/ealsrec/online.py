"""Incremental refresh of a trained model for one streamed interaction.

Only ``p_u`` and ``q_i`` are re-solved; the Gram caches are patched with
rank-one corrections, so an ingest costs ``O(K^2 + (|R_u| + |R_i|) K)``
regardless of how many interactions the model has seen.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np
from numba import njit

from .eals import DEFAULT_REG, _update_row
from .ingest import InteractionDataset
from .model import DEFAULT_INIT_SCALE, FactorModel, weighted_gram
from .weighting import ConfidenceWeights

DEFAULT_W_NEW = 4.0
RECOMPUTE_EVERY = 100_000


@dataclass
class OnlineConfig:
    w_new: float = DEFAULT_W_NEW
    online_iters: int = 1
    seed: int = 0
    lam: float = DEFAULT_REG
    init_scale: float = DEFAULT_INIT_SCALE
    recompute_every: int = RECOMPUTE_EVERY

    def __post_init__(self) -> None:
        if not self.w_new > 0:
            raise ValueError("w_new must be positive")
        if self.online_iters < 0:
            raise ValueError("online_iters must be >= 0")
        if self.init_scale < 0:
            raise ValueError("init_scale must be >= 0")


@njit(nogil=True, cache=True)
def _swap_outer(S, old, new, coef):
    # S += coef * (new new^T - old old^T), one pass per element
    K = S.shape[0]
    for a in range(K):
        for b in range(K):
            S[a, b] = S[a, b] - coef * old[a] * old[b] + coef * new[a] * new[b]


class _Growable:
    """Array whose leading dimension doubles on demand."""

    def __init__(self, data: np.ndarray, min_capacity: int = 16):
        cap = max(min_capacity, 2 * len(data))
        self.buf = np.zeros((cap,) + data.shape[1:], dtype=data.dtype)
        self.buf[: len(data)] = data
        self.size = len(data)

    def append(self, value) -> int:
        if self.size == len(self.buf):
            bigger = np.zeros((2 * len(self.buf),) + self.buf.shape[1:], dtype=self.buf.dtype)
            bigger[: self.size] = self.buf[: self.size]
            self.buf = bigger
        self.buf[self.size] = value
        self.size += 1
        return self.size - 1

    @property
    def view(self) -> np.ndarray:
        return self.buf[: self.size]


class OnlineUpdater:
    """Mutable serving state: model, dynamic dual index and frozen confidences.

    The offline confidence vector is kept as is; items first seen online get
    ``c_i = 0``. Ingests are serialised by an internal lock, which readers
    going through :meth:`scores` / :meth:`recommend_topk` also take, so a
    reader never sees a half-written row.
    """

    def __init__(self, model: FactorModel, train: InteractionDataset, weights: ConfidenceWeights,
                 config: OnlineConfig | None = None):
        if (model.n_users, model.n_items) != (train.n_users, train.n_items):
            raise ValueError("model and dataset dimensions differ")
        self.config = config or OnlineConfig()
        self.K = model.K
        self._lock = threading.RLock()

        self._P = _Growable(model.P.copy())
        self._Q = _Growable(model.Q.copy())
        self._c = _Growable(weights.extended(model.n_items).c.copy())
        nnz = train.nnz
        self._e_user = _Growable(train.entry_user.copy())
        self._e_item = _Growable(train.indices.copy())
        self._w = _Growable(train.w.copy())
        self._r = _Growable(train.r.copy())
        self._t = _Growable(train.times.copy())
        pred = model.pred.copy() if len(model.pred) == nnz else None
        if pred is None:
            pred = np.einsum("ek,ek->e", model.P[train.entry_user], model.Q[train.indices])
        self._pred = _Growable(pred)

        self.user_entries: list[list[int]] = [
            list(range(train.indptr[u], train.indptr[u + 1])) for u in range(train.n_users)
        ]
        self.item_entries: list[list[int]] = [
            train.item_pos[train.item_indptr[i]: train.item_indptr[i + 1]].tolist() for i in range(train.n_items)
        ]
        self._pair = {(int(u), int(i)): e for e, (u, i) in enumerate(zip(train.entry_user, train.indices))}
        self.user_ids = {k: u for u, k in enumerate(train.user_keys)}
        self.item_ids = {k: i for i, k in enumerate(train.item_keys)}

        self.Sp = weighted_gram(model.P)
        self.Sq = weighted_gram(model.Q, self._c.view)
        self.n_ingested = 0

    @property
    def n_users(self) -> int:
        return self._P.size

    @property
    def n_items(self) -> int:
        return self._Q.size

    @property
    def nnz(self) -> int:
        return len(self._pair)

    @property
    def P(self) -> np.ndarray:
        return self._P.view

    @property
    def Q(self) -> np.ndarray:
        return self._Q.view

    @property
    def c(self) -> np.ndarray:
        return self._c.view

    @property
    def pred(self) -> np.ndarray:
        return self._pred.view

    def history_len(self, u: int) -> int:
        return len(self.user_entries[u]) if u < self.n_users else 0

    def entry(self, u: int, i: int) -> dict | None:
        e = self._pair.get((u, i))
        if e is None:
            return None
        return {"w": float(self._w.buf[e]), "r": float(self._r.buf[e]), "t": int(self._t.buf[e]),
                "pred": float(self._pred.buf[e])}

    def model(self) -> FactorModel:
        """Snapshot of the current state as a standalone model."""
        with self._lock:
            m = FactorModel(self.P.copy(), self.Q.copy())
            m.Sp, m.Sq = self.Sp.copy(), self.Sq.copy()
            m.pred = self.pred.copy()
            return m

    def dataset(self) -> InteractionDataset:
        """Current interactions as an immutable dataset (``O(nnz)``)."""
        with self._lock:
            n = self._e_user.size
            return InteractionDataset(
                self.n_users, self.n_items, self._e_user.view.copy(), self._e_item.view.copy(),
                self._t.view.copy(), np.arange(n), self._w.view.copy(),
            )

    def scores(self, u: int) -> np.ndarray:
        with self._lock:
            return self.Q @ self.P[u]

    def predict(self, u: int, i: int) -> float:
        with self._lock:
            return float(self.P[u] @ self.Q[i])

    def recommend_topk(self, u: int, k: int, exclude_train: bool = False) -> list[tuple[int, float]]:
        with self._lock:
            scores = self.Q @ self.P[u]
            ids = np.arange(self.n_items)
            if exclude_train:
                mask = np.ones(self.n_items, dtype=bool)
                mask[[self._e_item.buf[e] for e in self.user_entries[u]]] = False
                ids, scores = ids[mask], scores[mask]
            order = np.lexsort((ids, -scores))[:k]
            return [(int(ids[j]), float(scores[j])) for j in order]

    def _random_row(self, kind: int, idx: int) -> np.ndarray:
        # keyed on the id, not on arrival order
        rng = np.random.default_rng((self.config.seed, kind, idx))
        return rng.random(self.K) * self.config.init_scale

    def add_user(self) -> int:
        """Append a randomly initialised user row."""
        with self._lock:
            p = self._random_row(0, self.n_users)
            u = self._P.append(p)
            _swap_outer(self.Sp, np.zeros(self.K), p, 1.0)
            self.user_entries.append([])
            return u

    def add_item(self) -> int:
        """Append a randomly initialised item row with zero confidence."""
        with self._lock:
            i = self._Q.append(self._random_row(1, self.n_items))
            self._c.append(0.0)
            self.item_entries.append([])
            return i

    def repeat_interaction_policy(self, u: int, i: int) -> str:
        return "reweight" if (u, i) in self._pair else "insert"

    def ingest_keys(self, user_key: str, item_key: str, t: int) -> tuple[int, int]:
        """Ingest by opaque keys, allocating ids for unseen users/items."""
        with self._lock:
            u = self.user_ids.get(user_key)
            if u is None:
                u = self.user_ids[user_key] = self.add_user()
            i = self.item_ids.get(item_key)
            if i is None:
                i = self.item_ids[item_key] = self.add_item()
            self.ingest(u, i, t)
            return u, i

    def ingest(self, u: int, i: int, t: int = 0) -> None:
        """Absorb interaction ``(u, i)`` at weight ``w_new``.

        ``u == n_users`` / ``i == n_items`` allocate a new row. A repeat of a
        known pair raises its weight to ``max(old, w_new)`` and refreshes the
        timestamp instead of adding a second entry.
        """
        cfg = self.config
        with self._lock:
            while u >= self.n_users:
                if u > self.n_users:
                    raise IndexError(f"user id {u} skips ahead of {self.n_users}")
                self.add_user()
            while i >= self.n_items:
                if i > self.n_items:
                    raise IndexError(f"item id {i} skips ahead of {self.n_items}")
                self.add_item()
            e = self._pair.get((u, i))
            if e is None:
                e = self._e_user.append(u)
                self._e_item.append(i)
                self._w.append(cfg.w_new)
                self._r.append(1.0)
                self._t.append(t)
                self._pred.append(float(self.P[u] @ self.Q[i]))
                self._pair[(u, i)] = e
                self.user_entries[u].append(e)
                self.item_entries[i].append(e)
            else:
                self._w.buf[e] = max(self._w.buf[e], cfg.w_new)
                self._t.buf[e] = t

            for _ in range(cfg.online_iters):
                self._update_user(u)
                self._update_item(i)

            self.n_ingested += 1
            if cfg.recompute_every and self.n_ingested % cfg.recompute_every == 0:
                self.recompute_caches()

    def _update_user(self, u: int) -> None:
        pos = np.array(self.user_entries[u], dtype=np.int64)
        others = self._e_item.buf[pos]
        old = self._P.buf[u].copy()
        new = old.copy()
        _update_row(new, others, pos, self._w.buf, self._r.buf, self._pred.buf, self.Q,
                    self.c, 1.0, False, self.Sq, self.config.lam)
        self._P.buf[u] = new
        _swap_outer(self.Sp, old, new, 1.0)

    def _update_item(self, i: int) -> None:
        pos = np.array(self.item_entries[i], dtype=np.int64)
        others = self._e_user.buf[pos]
        ci = float(self._c.buf[i])
        old = self._Q.buf[i].copy()
        new = old.copy()
        _update_row(new, others, pos, self._w.buf, self._r.buf, self._pred.buf, self.P,
                    self.c, ci, True, self.Sp, self.config.lam)
        self._Q.buf[i] = new
        if ci != 0.0:
            _swap_outer(self.Sq, old, new, ci)

    def recompute_caches(self) -> None:
        with self._lock:
            self.Sp = weighted_gram(self.P)
            self.Sq = weighted_gram(self.Q, self.c)


def ingest_interaction(updater: OnlineUpdater, user_key: str, item_key: str, t: int) -> tuple[int, int]:
    """Functional entry point; see :meth:`OnlineUpdater.ingest_keys`."""
    return updater.ingest_keys(user_key, item_key, t)
