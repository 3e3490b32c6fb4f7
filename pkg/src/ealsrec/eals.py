"""Element-wise ALS with popularity-weighted missing data.

Each latent coordinate is set to its exact minimiser with everything else
held fixed. The missing-data sums are folded into the ``Sq``/``Sp`` caches
and the observed part uses the prediction cache, so a coordinate update
costs ``O(K + |R_u|)`` instead of ``O(N)``.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

from .ingest import InteractionDataset
from .model import DEFAULT_INIT_SCALE, FactorModel, init_model, weighted_gram
from .weighting import ConfidenceWeights

DEFAULT_REG = 0.01


class SingularUpdateError(ArithmeticError):
    """A coordinate update hit a non-positive denominator."""


@njit(nogil=True, cache=True)
def _coord_update(x, f, others, pos, w, r, pred, Y, c, self_conf, item_side, S, lam):
    """Minimise over ``x[f]`` and keep ``pred`` in sync.

    ``x`` is the row being solved (``p_u`` or ``q_i``), ``Y`` the opposite
    factor matrix, ``others``/``pos`` the row's observed partners and their
    entry slots. On the item side every missing term carries ``c_i``, on
    the user side each carries ``c`` of the partner item.
    """
    xf = x[f]
    num = 0.0
    den = 0.0
    mag = 0.0
    for j in range(others.shape[0]):
        e = pos[j]
        y = Y[others[j], f]
        ci = self_conf if item_side else c[others[j]]
        rf = pred[e] - xf * y
        we = w[e]
        num += (we * r[e] - (we - ci) * rf) * y
        den += (we - ci) * y * y
        mag += abs(we - ci) * y * y
    g = self_conf if item_side else 1.0
    acc = 0.0
    for k in range(x.shape[0]):
        acc += x[k] * S[f, k]
    num -= g * (acc - xf * S[f, f])
    den += g * S[f, f]
    mag += abs(g * S[f, f])
    # holds because S[f, f] already contains the c-weighted observed terms
    if den < -1e-9 * mag:
        raise ArithmeticError("negative data curvature: observed weights below cache terms")
    den += lam
    if not den > 0.0:
        raise ArithmeticError("non-positive denominator in coordinate update")
    new = num / den
    for j in range(others.shape[0]):
        e = pos[j]
        y = Y[others[j], f]
        pred[e] = (pred[e] - xf * y) + new * y
    x[f] = new
    return new


@njit(nogil=True, cache=True)
def _update_row(x, others, pos, w, r, pred, Y, c, self_conf, item_side, S, lam):
    for f in range(x.shape[0]):
        _coord_update(x, f, others, pos, w, r, pred, Y, c, self_conf, item_side, S, lam)


@njit(nogil=True, cache=True)
def _phase(lo, hi, ptr, others, pos, w, r, pred, X, Y, c, item_side, S, lam):
    for row in range(lo, hi):
        a = ptr[row]
        b = ptr[row + 1]
        self_conf = c[row] if item_side else 1.0
        _update_row(X[row], others[a:b], pos[a:b], w, r, pred, Y, c, self_conf, item_side, S, lam)


@njit(nogil=True, cache=True)
def _objective_fast(indptr, indices, w, r, pred, P, Q, c, Sq, lam):
    observed = 0.0
    overlap = 0.0
    for u in range(indptr.shape[0] - 1):
        for p in range(indptr[u], indptr[u + 1]):
            err = r[p] - pred[p]
            observed += w[p] * err * err
            overlap += c[indices[p]] * pred[p] * pred[p]
    K = P.shape[1]
    quad = 0.0
    for u in range(P.shape[0]):
        for a in range(K):
            t = 0.0
            for b in range(K):
                t += Sq[a, b] * P[u, b]
            quad += P[u, a] * t
    reg = 0.0
    for u in range(P.shape[0]):
        for k in range(K):
            reg += P[u, k] * P[u, k]
    for i in range(Q.shape[0]):
        for k in range(K):
            reg += Q[i, k] * Q[i, k]
    return observed + quad - overlap + lam * reg


@njit(cache=True)
def _objective_dense(P, Q, R, W, lam):
    total = 0.0
    for u in range(P.shape[0]):
        for i in range(Q.shape[0]):
            s = 0.0
            for k in range(P.shape[1]):
                s += P[u, k] * Q[i, k]
            e = R[u, i] - s
            total += W[u, i] * e * e
    reg = 0.0
    for u in range(P.shape[0]):
        for k in range(P.shape[1]):
            reg += P[u, k] * P[u, k]
    for i in range(Q.shape[0]):
        for k in range(Q.shape[1]):
            reg += Q[i, k] * Q[i, k]
    return total + lam * reg


@dataclass
class TrainConfig:
    K: int = 128
    lam: float = DEFAULT_REG
    max_iters: int = 500
    rel_tol: float = 1e-5
    seed: int = 0
    threads: int = 1
    init_scale: float = DEFAULT_INIT_SCALE

    def __post_init__(self) -> None:
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if not self.lam > 0:
            raise ValueError("lambda must be strictly positive")
        if self.max_iters < 0 or self.rel_tol < 0:
            raise ValueError("max_iters and rel_tol must be non-negative")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")


@dataclass
class TrainTrace:
    """Objective after each sweep; record 0 is the initial state."""

    records: list[dict] = field(default_factory=list)

    def add(self, it: int, objective: float, seconds: float) -> None:
        self.records.append({"iter": it, "objective": float(objective), "seconds": float(seconds)})

    @property
    def objectives(self) -> list[float]:
        return [rec["objective"] for rec in self.records]

    @property
    def n_sweeps(self) -> int:
        return max(0, len(self.records) - 1)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(rec) + "\n" for rec in self.records)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")


def _user_side(train: InteractionDataset):
    return train.indptr, train.indices, np.arange(train.nnz, dtype=np.int64)


def _item_side(train: InteractionDataset):
    return train.item_indptr, train.item_users, train.item_pos


def _check_fit(model: FactorModel, train: InteractionDataset, weights: ConfidenceWeights) -> None:
    if train.n_users != model.n_users or train.n_items != model.n_items:
        raise ValueError(f"model is {model.n_users}x{model.n_items}, dataset is {train.n_users}x{train.n_items}")
    if len(weights.c) != model.n_items:
        raise ValueError("confidence vector length does not match item count")
    if len(model.pred) != train.nnz:
        raise ValueError("prediction cache is not aligned with the dataset; call refresh_prediction_cache")


def update_user_factor(model: FactorModel, u: int, f: int, train: InteractionDataset,
                       weights: ConfidenceWeights, lam: float = DEFAULT_REG) -> float:
    """Set ``p_uf`` to its exact minimiser using ``Sq``; returns the new value."""
    ptr, others, pos = _user_side(train)
    a, b = ptr[u], ptr[u + 1]
    try:
        return _coord_update(model.P[u], f, others[a:b], pos[a:b], train.w, train.r, model.pred,
                             model.Q, weights.c, 1.0, False, model.Sq, lam)
    except ArithmeticError as exc:
        raise SingularUpdateError(str(exc)) from None


def update_item_factor(model: FactorModel, i: int, f: int, train: InteractionDataset,
                       weights: ConfidenceWeights, lam: float = DEFAULT_REG) -> float:
    """Set ``q_if`` to its exact minimiser using ``Sp``; returns the new value."""
    ptr, others, pos = _item_side(train)
    a, b = ptr[i], ptr[i + 1]
    try:
        return _coord_update(model.Q[i], f, others[a:b], pos[a:b], train.w, train.r, model.pred,
                             model.P, weights.c, float(weights.c[i]), True, model.Sp, lam)
    except ArithmeticError as exc:
        raise SingularUpdateError(str(exc)) from None


def _dense_targets(train: InteractionDataset, weights: ConfidenceWeights) -> tuple[np.ndarray, np.ndarray]:
    R = np.zeros((train.n_users, train.n_items))
    W = np.tile(weights.c, (train.n_users, 1))
    R[train.entry_user, train.indices] = train.r
    W[train.entry_user, train.indices] = train.w
    return R, W


def naive_update_user_factor(model: FactorModel, u: int, f: int, train: InteractionDataset,
                             weights: ConfidenceWeights, lam: float = DEFAULT_REG) -> float:
    """Reference minimiser for ``p_uf`` summing over all ``N`` items.

    Does not modify the model.
    """
    w = weights.c.copy()
    r = np.zeros(train.n_items)
    lo, hi = train.indptr[u], train.indptr[u + 1]
    w[train.indices[lo:hi]] = train.w[lo:hi]
    r[train.indices[lo:hi]] = train.r[lo:hi]
    q = model.Q[:, f]
    rhat_f = model.Q @ model.P[u] - model.P[u, f] * q
    den = np.sum(w * q * q) + lam
    if den == 0:
        raise SingularUpdateError(f"zero denominator for user {u}, factor {f}")
    return float(np.sum((r - rhat_f) * w * q) / den)


def naive_update_item_factor(model: FactorModel, i: int, f: int, train: InteractionDataset,
                             weights: ConfidenceWeights, lam: float = DEFAULT_REG) -> float:
    """Reference minimiser for ``q_if`` summing over all ``M`` users."""
    w = np.full(train.n_users, weights.c[i])
    r = np.zeros(train.n_users)
    lo, hi = train.item_indptr[i], train.item_indptr[i + 1]
    pos = train.item_pos[lo:hi]
    w[train.item_users[lo:hi]] = train.w[pos]
    r[train.item_users[lo:hi]] = train.r[pos]
    p = model.P[:, f]
    rhat_f = model.P @ model.Q[i] - model.Q[i, f] * p
    den = np.sum(w * p * p) + lam
    if den == 0:
        raise SingularUpdateError(f"zero denominator for item {i}, factor {f}")
    return float(np.sum((r - rhat_f) * w * p) / den)


def objective_fast(model: FactorModel, train: InteractionDataset, weights: ConfidenceWeights,
                   lam: float = DEFAULT_REG) -> float:
    """Weighted loss in ``O(|R| + M K^2)``; needs a current ``Sq`` and prediction cache."""
    return float(_objective_fast(train.indptr, train.indices, train.w, train.r, model.pred,
                                 model.P, model.Q, weights.c, model.Sq, lam))


def objective_naive(model: FactorModel, train: InteractionDataset, weights: ConfidenceWeights,
                    lam: float = DEFAULT_REG) -> float:
    """Weighted loss by brute force over every cell; ``O(MNK)``."""
    R, W = _dense_targets(train, weights)
    return float(_objective_dense(model.P, model.Q, R, W, lam))


def _partitions(n: int, parts: int) -> list[tuple[int, int]]:
    parts = max(1, min(parts, n)) if n else 1
    edges = np.linspace(0, n, parts + 1).astype(np.int64)
    return [(int(edges[j]), int(edges[j + 1])) for j in range(parts)]


def _run_phase(side, n_rows, train, model, X, Y, c, item_side, S, lam, threads):
    ptr, others, pos = side

    def run(bounds):
        _phase(bounds[0], bounds[1], ptr, others, pos, train.w, train.r, model.pred,
               X, Y, c, item_side, S, lam)

    chunks = _partitions(n_rows, threads)
    try:
        if threads > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(threads) as pool:
                list(pool.map(run, chunks))
        else:
            for ch in chunks:
                run(ch)
    except ArithmeticError as exc:
        raise SingularUpdateError(str(exc)) from None


def sweep(model: FactorModel, train: InteractionDataset, weights: ConfidenceWeights,
          lam: float = DEFAULT_REG, threads: int = 1) -> FactorModel:
    """One pass over every user coordinate, then every item coordinate.

    Expects ``Sq`` and the prediction cache to be current on entry. Users
    in one phase touch disjoint rows of ``P`` and disjoint slots of the
    prediction cache while ``Sq`` is read-only, so splitting rows across
    threads gives bit-identical results. ``Sq`` is rebuilt at the end, which
    doubles as the rebuild the next sweep's user phase needs.
    """
    _check_fit(model, train, weights)
    c = weights.c
    _run_phase(_user_side(train), train.n_users, train, model, model.P, model.Q, c, False, model.Sq, lam, threads)
    model.Sp = weighted_gram(model.P, None, threads)
    _run_phase(_item_side(train), train.n_items, train, model, model.Q, model.P, c, True, model.Sp, lam, threads)
    model.Sq = weighted_gram(model.Q, c, threads)
    return model


def train(train_data: InteractionDataset, weights: ConfidenceWeights,
          config: TrainConfig | None = None) -> tuple[FactorModel, TrainTrace]:
    """Fit a model by repeated sweeps until the relative objective change
    drops below ``rel_tol`` or ``max_iters`` sweeps have run."""
    config = config or TrainConfig()
    if len(weights.c) != train_data.n_items:
        raise ValueError("confidence vector length does not match item count")
    model = init_model(train_data.n_users, train_data.n_items, config.K, config.seed,
                       config.init_scale, weights, train_data)
    trace = TrainTrace()
    prev = objective_fast(model, train_data, weights, config.lam)
    trace.add(0, prev, 0.0)
    start = time.perf_counter()
    for it in range(1, config.max_iters + 1):
        sweep(model, train_data, weights, config.lam, config.threads)
        cur = objective_fast(model, train_data, weights, config.lam)
        trace.add(it, cur, time.perf_counter() - start)
        if prev != 0 and abs(cur - prev) / abs(prev) < config.rel_tol:
            break
        prev = cur
    return model, trace


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)
