"""Factor model state: P, Q, the Gram caches and the prediction cache."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
from numba import njit

from .ingest import InteractionDataset
from .weighting import ConfidenceWeights

GRAM_BLOCK = 512
DEFAULT_INIT_SCALE = 0.01


@njit(nogil=True, cache=True)
def _weighted_gram(X, c, lo, hi, out):
    # out = sum_{r in [lo, hi)} c[r] * x_r x_r^T, upper triangle then mirrored
    K = X.shape[1]
    for a in range(K):
        for b in range(a, K):
            out[a, b] = 0.0
    for r in range(lo, hi):
        cr = c[r]
        if cr == 0.0:
            continue
        for a in range(K):
            xa = cr * X[r, a]
            for b in range(a, K):
                out[a, b] += xa * X[r, b]
    for a in range(K):
        for b in range(a + 1, K):
            out[b, a] = out[a, b]


@njit(nogil=True, cache=True)
def _refresh_predictions(indptr, indices, P, Q, pred):
    for u in range(indptr.shape[0] - 1):
        for p in range(indptr[u], indptr[u + 1]):
            i = indices[p]
            s = 0.0
            for k in range(P.shape[1]):
                s += P[u, k] * Q[i, k]
            pred[p] = s


def weighted_gram(X: np.ndarray, c: np.ndarray | None = None, threads: int = 1) -> np.ndarray:
    """``sum_r c_r x_r x_r^T`` with a thread-count independent result.

    Rows are cut into fixed blocks and the block partials are combined by
    pairwise reduction in a fixed order, so any ``threads`` gives the same
    bits.
    """
    n, K = X.shape
    if c is None:
        c = np.ones(n)
    bounds = [(lo, min(lo + GRAM_BLOCK, n)) for lo in range(0, n, GRAM_BLOCK)]
    if not bounds:
        return np.zeros((K, K))
    parts = [np.empty((K, K)) for _ in bounds]

    def run(j: int) -> None:
        lo, hi = bounds[j]
        _weighted_gram(X, c, lo, hi, parts[j])

    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(threads) as pool:
            list(pool.map(run, range(len(bounds))))
    else:
        for j in range(len(bounds)):
            run(j)
    while len(parts) > 1:
        parts = [parts[j] + parts[j + 1] if j + 1 < len(parts) else parts[j] for j in range(0, len(parts), 2)]
    return parts[0]


class FactorModel:
    """Latent factors plus the caches the element-wise solver relies on.

    ``Sp = P^T P`` and ``Sq = sum_i c_i q_i q_i^T``; ``pred`` holds
    ``p_u . q_i`` for every observed entry, aligned with the user-major
    entry order of the training dataset.
    """

    def __init__(self, P: np.ndarray, Q: np.ndarray):
        if P.shape[1] != Q.shape[1]:
            raise ValueError("P and Q must share the factor dimension")
        self.P = np.ascontiguousarray(P, dtype=np.float64)
        self.Q = np.ascontiguousarray(Q, dtype=np.float64)
        K = self.P.shape[1]
        self.Sp = np.zeros((K, K))
        self.Sq = np.zeros((K, K))
        self.pred = np.zeros(0)

    @property
    def K(self) -> int:
        return self.P.shape[1]

    @property
    def n_users(self) -> int:
        return self.P.shape[0]

    @property
    def n_items(self) -> int:
        return self.Q.shape[0]

    def copy(self) -> "FactorModel":
        m = FactorModel(self.P.copy(), self.Q.copy())
        m.Sp, m.Sq, m.pred = self.Sp.copy(), self.Sq.copy(), self.pred.copy()
        return m

    def _check_user(self, u: int) -> None:
        if not 0 <= u < self.n_users:
            raise IndexError(f"user id {u} out of range [0, {self.n_users})")

    def _check_item(self, i: int) -> None:
        if not 0 <= i < self.n_items:
            raise IndexError(f"item id {i} out of range [0, {self.n_items})")

    def predict(self, u: int, i: int) -> float:
        self._check_user(u)
        self._check_item(i)
        return float(self.P[u] @ self.Q[i])

    def scores(self, u: int) -> np.ndarray:
        self._check_user(u)
        return self.Q @ self.P[u]

    def recommend_topk(
        self,
        u: int,
        k: int,
        exclude_train: bool = False,
        train: InteractionDataset | None = None,
    ) -> list[tuple[int, float]]:
        """Top-``k`` ``(item, score)`` pairs, ties broken by ascending item id."""
        if k < 1:
            raise ValueError("k must be >= 1")
        scores = self.scores(u)
        ids = np.arange(self.n_items)
        if exclude_train:
            if train is None:
                raise ValueError("exclude_train needs the training dataset")
            mask = np.ones(self.n_items, dtype=bool)
            if u < train.n_users:
                mask[train.user_items(u)] = False
            ids, scores = ids[mask], scores[mask]
        order = np.lexsort((ids, -scores))[:k]
        return [(int(ids[j]), float(scores[j])) for j in order]

    def recompute_caches(self, weights: ConfidenceWeights | np.ndarray, threads: int = 1) -> "FactorModel":
        c = weights.c if isinstance(weights, ConfidenceWeights) else np.asarray(weights, dtype=np.float64)
        if len(c) != self.n_items:
            raise ValueError("confidence vector length does not match item count")
        self.Sp = weighted_gram(self.P, None, threads)
        self.Sq = weighted_gram(self.Q, c, threads)
        return self

    def refresh_prediction_cache(self, train: InteractionDataset) -> "FactorModel":
        if train.n_users > self.n_users or train.n_items > self.n_items:
            raise ValueError("dataset does not fit the model dimensions")
        self.pred = np.empty(train.nnz)
        _refresh_predictions(train.indptr, train.indices, self.P, self.Q, self.pred)
        return self

    def check_invariants(self, weights: ConfidenceWeights, train: InteractionDataset | None = None,
                         cache_tol: float = 1e-8, pred_tol: float = 1e-10) -> None:
        """Raise ``AssertionError`` if a cache drifted from its definition."""
        c = weights.c
        sp = self.P.T @ self.P
        sq = (self.Q * c[:, None]).T @ self.Q
        assert np.abs(self.Sp - sp).max(initial=0.0) <= cache_tol, "Sp drifted"
        assert np.abs(self.Sq - sq).max(initial=0.0) <= cache_tol, "Sq drifted"
        assert np.abs(self.Sp - self.Sp.T).max(initial=0.0) <= cache_tol, "Sp not symmetric"
        assert np.abs(self.Sq - self.Sq.T).max(initial=0.0) <= cache_tol, "Sq not symmetric"
        if train is not None:
            direct = np.einsum("ek,ek->e", self.P[train.entry_user], self.Q[train.indices])
            assert np.abs(self.pred - direct).max(initial=0.0) <= pred_tol, "prediction cache drifted"

    def save(self, path: str | Path) -> None:
        """Text snapshot: ``M N K`` header, rows of P then rows of Q."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"{self.n_users} {self.n_items} {self.K}\n")
            for row in self.P:
                fh.write(" ".join(repr(float(x)) for x in row) + "\n")
            for row in self.Q:
                fh.write(" ".join(repr(float(x)) for x in row) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "FactorModel":
        with open(path, encoding="utf-8") as fh:
            m, n, k = (int(x) for x in fh.readline().split())
            rows = [np.array([float(x) for x in line.split()]) for line in fh if line.strip()]
        if len(rows) != m + n or any(len(r) != k for r in rows):
            raise ValueError(f"snapshot {path} is inconsistent with header {m} {n} {k}")
        data = np.array(rows).reshape(m + n, k)
        return cls(data[:m], data[m:])


def init_model(
    n_users: int,
    n_items: int,
    K: int,
    seed: int = 0,
    scale: float = DEFAULT_INIT_SCALE,
    weights: ConfidenceWeights | None = None,
    train: InteractionDataset | None = None,
) -> FactorModel:
    """Random model with factors drawn uniformly from ``[0, scale)``.

    ``Sp`` is always filled in; ``Sq`` needs ``weights`` and the prediction
    cache needs ``train``.
    """
    if n_users < 0 or n_items < 0 or K < 1 or scale <= 0:
        raise ValueError("invalid model dimensions or scale")
    rng = np.random.default_rng(seed)
    P = rng.random((n_users, K)) * scale
    Q = rng.random((n_items, K)) * scale
    model = FactorModel(P, Q)
    model.Sp = weighted_gram(model.P)
    if weights is not None:
        model.Sq = weighted_gram(model.Q, weights.c)
    if train is not None:
        model.refresh_prediction_cache(train)
    return model
