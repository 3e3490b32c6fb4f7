"""Comparison learners: vector-wise ALS with a uniform missing weight, and BPR."""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numba import njit

from .eals import DEFAULT_REG, TrainTrace, _item_side, _objective_fast, _partitions, _user_side
from .ingest import InteractionDataset
from .model import DEFAULT_INIT_SCALE, FactorModel, init_model, weighted_gram


@dataclass
class AlsConfig:
    K: int = 128
    lam: float = DEFAULT_REG
    w0: float = 0.01
    max_iters: int = 500
    rel_tol: float = 1e-5
    seed: int = 0
    threads: int = 1
    init_scale: float = DEFAULT_INIT_SCALE

    def __post_init__(self) -> None:
        if self.K < 1 or not self.lam > 0 or not self.w0 > 0 or self.threads < 1:
            raise ValueError("invalid ALS configuration")


@dataclass
class BprConfig:
    K: int = 128
    lam: float = DEFAULT_REG
    learning_rate: float = 0.05
    epochs: int = 20
    samples_per_epoch: int | None = None
    seed: int = 0
    init_scale: float = DEFAULT_INIT_SCALE

    def __post_init__(self) -> None:
        if self.K < 1 or self.lam < 0 or not self.learning_rate > 0 or self.epochs < 0:
            raise ValueError("invalid BPR configuration")


@njit(nogil=True, cache=True)
def _cholesky_solve(A, b, out):
    L = np.linalg.cholesky(A)
    K = b.shape[0]
    z = np.empty(K)
    for a in range(K):
        s = b[a]
        for k in range(a):
            s -= L[a, k] * z[k]
        z[a] = s / L[a, a]
    for a in range(K - 1, -1, -1):
        s = z[a]
        for k in range(a + 1, K):
            s -= L[k, a] * out[k]
        out[a] = s / L[a, a]


@njit(nogil=True, cache=True)
def _als_phase(lo, hi, ptr, others, pos, w, r, X, Y, G, w0, lam):
    K = X.shape[1]
    A = np.empty((K, K))
    b = np.empty(K)
    for row in range(lo, hi):
        for a in range(K):
            b[a] = 0.0
            for c in range(K):
                A[a, c] = w0 * G[a, c]
            A[a, a] += lam
        for j in range(ptr[row], ptr[row + 1]):
            o = others[j]
            e = pos[j]
            d = w[e] - w0
            for a in range(K):
                ya = Y[o, a]
                b[a] += w[e] * r[e] * ya
                dya = d * ya
                for c in range(a, K):
                    A[a, c] += dya * Y[o, c]
        for a in range(K):
            for c in range(a + 1, K):
                A[c, a] = A[a, c]
        _cholesky_solve(A, b, X[row])


def _als_run(side, n_rows, train, X, Y, w0, lam, threads):
    ptr, others, pos = side
    G = weighted_gram(Y, None, threads)

    def run(bounds):
        _als_phase(bounds[0], bounds[1], ptr, others, pos, train.w, train.r, X, Y, G, w0, lam)

    chunks = _partitions(n_rows, threads)
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(threads) as pool:
            list(pool.map(run, chunks))
    else:
        for ch in chunks:
            run(ch)


def als_update_user(model: FactorModel, u: int, train: InteractionDataset, w0: float,
                    lam: float = DEFAULT_REG, gram: np.ndarray | None = None) -> np.ndarray:
    """Ridge-regression solve for ``p_u``; writes it into ``model.P`` and returns it.

    The system matrix is ``w0 Q^T Q + Q^T (W^u - w0 I) Q + lam I`` where only
    the ``|R_u|`` observed rows enter the correction.
    """
    ptr, others, pos = _user_side(train)
    G = weighted_gram(model.Q) if gram is None else gram
    _als_phase(u, u + 1, ptr, others, pos, train.w, train.r, model.P, model.Q, G, w0, lam)
    return model.P[u].copy()


def als_update_item(model: FactorModel, i: int, train: InteractionDataset, w0: float,
                    lam: float = DEFAULT_REG, gram: np.ndarray | None = None) -> np.ndarray:
    ptr, others, pos = _item_side(train)
    G = weighted_gram(model.P) if gram is None else gram
    _als_phase(i, i + 1, ptr, others, pos, train.w, train.r, model.Q, model.P, G, w0, lam)
    return model.Q[i].copy()


def als_sweep(model: FactorModel, train: InteractionDataset, w0: float,
              lam: float = DEFAULT_REG, threads: int = 1) -> FactorModel:
    """Solve every user row against fixed ``Q``, then every item row."""
    _als_run(_user_side(train), train.n_users, train, model.P, model.Q, w0, lam, threads)
    _als_run(_item_side(train), train.n_items, train, model.Q, model.P, w0, lam, threads)
    return model


def als_objective(model: FactorModel, train: InteractionDataset, w0: float, lam: float = DEFAULT_REG) -> float:
    """Weighted loss with every missing cell at weight ``w0``; refreshes caches."""
    model.refresh_prediction_cache(train)
    c = np.full(train.n_items, float(w0))
    model.Sq = weighted_gram(model.Q, c)
    return float(_objective_fast(train.indptr, train.indices, train.w, train.r, model.pred,
                                 model.P, model.Q, c, model.Sq, lam))


def als_train(train: InteractionDataset, config: AlsConfig | None = None) -> tuple[FactorModel, TrainTrace]:
    config = config or AlsConfig()
    model = init_model(train.n_users, train.n_items, config.K, config.seed, config.init_scale)
    trace = TrainTrace()
    prev = als_objective(model, train, config.w0, config.lam)
    trace.add(0, prev, 0.0)
    start = time.perf_counter()
    for it in range(1, config.max_iters + 1):
        als_sweep(model, train, config.w0, config.lam, config.threads)
        cur = als_objective(model, train, config.w0, config.lam)
        trace.add(it, cur, time.perf_counter() - start)
        if prev != 0 and abs(cur - prev) / abs(prev) < config.rel_tol:
            break
        prev = cur
    model.Sp = weighted_gram(model.P)
    return model, trace


@njit(cache=True)
def _contains_sorted(arr, lo, hi, x):
    end = hi
    while lo < hi:
        mid = (lo + hi) // 2
        if arr[mid] < x:
            lo = mid + 1
        else:
            hi = mid
    return lo < end and arr[lo] == x


@njit(cache=True)
def _bpr_step(P, Q, u, i, j, lr, lam):
    K = P.shape[1]
    x = 0.0
    for k in range(K):
        x += P[u, k] * (Q[i, k] - Q[j, k])
    sig = 1.0 / (1.0 + math.exp(x)) if x > -700.0 else 1.0
    for k in range(K):
        pu = P[u, k]
        qi = Q[i, k]
        qj = Q[j, k]
        P[u, k] += lr * (sig * (qi - qj) - lam * pu)
        Q[i, k] += lr * (sig * pu - lam * qi)
        Q[j, k] += lr * (-sig * pu - lam * qj)
    # -log(sigmoid(x))
    return sig, (math.log1p(math.exp(-x)) if x > -30.0 else -x)


@njit(cache=True)
def _bpr_epoch(seed, entry_user, indices, indptr, P, Q, n_samples, lr, lam):
    np.random.seed(seed)
    nnz = indices.shape[0]
    n_items = Q.shape[0]
    loss = 0.0
    done = 0
    for _ in range(n_samples):
        e = np.random.randint(0, nnz)
        u = entry_user[e]
        i = indices[e]
        lo = indptr[u]
        hi = indptr[u + 1]
        if hi - lo >= n_items:
            continue
        j = np.random.randint(0, n_items)
        while _contains_sorted(indices, lo, hi, j):
            j = np.random.randint(0, n_items)
        _, l = _bpr_step(P, Q, u, i, j, lr, lam)
        loss += l
        done += 1
    return loss / max(done, 1)


def bpr_step(model: FactorModel, u: int, i: int, j: int, learning_rate: float, lam: float = DEFAULT_REG) -> float:
    """One ascent step on ``ln sigmoid(r_ui - r_uj)``; returns the gradient weight."""
    sig, _ = _bpr_step(model.P, model.Q, u, i, j, learning_rate, lam)
    return sig


def bpr_train(train: InteractionDataset, config: BprConfig | None = None) -> tuple[FactorModel, TrainTrace]:
    """SGD over uniformly sampled ``(u, i, j)`` triples.

    ``j`` is drawn uniformly among items the user has not interacted with.
    The trace records the mean sampled loss per epoch.
    """
    config = config or BprConfig()
    if train.nnz == 0:
        raise ValueError("BPR needs at least one interaction")
    model = init_model(train.n_users, train.n_items, config.K, config.seed, config.init_scale)
    n_samples = config.samples_per_epoch or train.nnz
    trace = TrainTrace()
    seeds = np.random.default_rng(config.seed).integers(0, 2**31 - 1, size=config.epochs)
    start = time.perf_counter()
    for epoch in range(config.epochs):
        loss = _bpr_epoch(int(seeds[epoch]), train.entry_user, train.indices, train.indptr,
                          model.P, model.Q, n_samples, config.learning_rate, config.lam)
        trace.add(epoch + 1, loss, time.perf_counter() - start)
    model.refresh_prediction_cache(train)
    model.Sp = weighted_gram(model.P)
    return model, trace
