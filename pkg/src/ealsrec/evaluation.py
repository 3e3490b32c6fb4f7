"""Hit ratio / NDCG and the offline (leave-one-out) and online (stream) protocols."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .ingest import InteractionDataset, SplitPair
from .model import FactorModel
from .online import OnlineConfig, OnlineUpdater
from .weighting import ConfidenceWeights

log = logging.getLogger(__name__)

DEFAULT_CUTOFF = 100


def _items(ranked: Sequence) -> list[int]:
    return [int(x[0]) if isinstance(x, (tuple, list)) else int(x) for x in ranked]


def hit_ratio(ranked: Sequence, gt: int, cutoff: int = DEFAULT_CUTOFF) -> int:
    """1 if ``gt`` is among the first ``cutoff`` entries of ``ranked``."""
    return int(gt in _items(ranked)[:cutoff])


def ndcg(ranked: Sequence, gt: int, cutoff: int = DEFAULT_CUTOFF) -> float:
    """``1 / log2(pos + 1)`` for a hit at 1-based ``pos``, else 0."""
    items = _items(ranked)[:cutoff]
    if gt not in items:
        return 0.0
    return 1.0 / math.log2(items.index(gt) + 2)


def rank_of(scores: np.ndarray, gt: int, excluded: np.ndarray | None = None) -> int | None:
    """1-based position of ``gt`` in the full ranking (score desc, id asc).

    Same order as :meth:`FactorModel.recommend_topk` but ``O(N)`` without
    sorting. Returns ``None`` when ``gt`` is excluded.
    """
    s = scores[gt]
    better = scores > s
    ties = (scores == s) & (np.arange(len(scores)) < gt)
    if excluded is not None and len(excluded):
        if gt in set(excluded.tolist()):
            return None
        better[excluded] = False
        ties[excluded] = False
    return int(better.sum() + ties.sum()) + 1


def _metrics(rank: int | None, cutoff: int) -> tuple[int, float]:
    if rank is None or rank > cutoff:
        return 0, 0.0
    return 1, 1.0 / math.log2(rank + 1)


@dataclass
class EvalReport:
    cutoff: int
    per_event: list[dict] = field(default_factory=list)
    skipped: int = 0
    seconds: float = 0.0

    @property
    def hr(self) -> float:
        return float(np.mean([e["hr"] for e in self.per_event])) if self.per_event else 0.0

    @property
    def ndcg(self) -> float:
        return float(np.mean([e["ndcg"] for e in self.per_event])) if self.per_event else 0.0

    def aggregate(self) -> dict:
        return {"type": "aggregate", "cutoff": self.cutoff, "events": len(self.per_event),
                "skipped": self.skipped, "hr": self.hr, "ndcg": self.ndcg}

    def to_jsonl(self) -> str:
        """One JSON object per event and a final aggregate line; no timings,
        so equal inputs give byte-identical output."""
        lines = [json.dumps({"type": "event", **e}) for e in self.per_event]
        lines.append(json.dumps(self.aggregate()))
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")

    def breakdown(self, max_len: int | None = None) -> list[dict]:
        """Mean HR/NDCG grouped by the user's history length at event time.

        Lengths ``>= max_len`` share the last bucket when ``max_len`` is set.
        """
        groups: dict[int, list[dict]] = {}
        for e in self.per_event:
            h = e["history_len"]
            if max_len is not None:
                h = min(h, max_len)
            groups.setdefault(h, []).append(e)
        return [
            {"history_len": h, "count": len(g),
             "hr": float(np.mean([e["hr"] for e in g])),
             "ndcg": float(np.mean([e["ndcg"] for e in g]))}
            for h, g in sorted(groups.items())
        ]

    def breakdown_csv(self, max_len: int | None = None) -> str:
        rows = ["history_len,count,hr,ndcg"]
        rows += [f"{r['history_len']},{r['count']},{r['hr']!r},{r['ndcg']!r}" for r in self.breakdown(max_len)]
        return "\n".join(rows) + "\n"

    def windowed(self, window: int) -> list[dict]:
        """Means over consecutive blocks of ``window`` events."""
        out = []
        for lo in range(0, len(self.per_event), window):
            chunk = self.per_event[lo: lo + window]
            out.append({"end": lo + len(chunk), "hr": float(np.mean([e["hr"] for e in chunk])),
                        "ndcg": float(np.mean([e["ndcg"] for e in chunk]))})
        return out


def evaluate_offline(model: FactorModel, split: SplitPair, cutoff: int = DEFAULT_CUTOFF,
                     exclude_train: bool = False) -> EvalReport:
    """Score every held-out event against a fixed model.

    Events for users the model has never seen are skipped and counted;
    items the model has never seen cannot be ranked and count as misses.
    """
    report = EvalReport(cutoff)
    train = split.train
    for u, i, t in split.test:
        if u >= model.n_users:
            report.skipped += 1
            continue
        hist = int(train.indptr[u + 1] - train.indptr[u]) if u < train.n_users else 0
        if i >= model.n_items:
            rank = None
        else:
            excluded = train.user_items(u) if exclude_train and u < train.n_users else None
            rank = rank_of(model.scores(u), i, excluded)
        hr, nd = _metrics(rank, cutoff)
        report.per_event.append({"u": u, "i": i, "t": t, "rank": rank, "hr": hr, "ndcg": nd,
                                 "history_len": hist})
    if report.skipped:
        log.warning("skipped %d test events for users unknown to the model", report.skipped)
    return report


def evaluate_online(model: FactorModel, train: InteractionDataset, weights: ConfidenceWeights,
                    test_stream: Iterable[tuple[int, int, int]], config: OnlineConfig | None = None,
                    cutoff: int = DEFAULT_CUTOFF, exclude_train: bool = False,
                    updater: OnlineUpdater | None = None) -> EvalReport:
    """Recommend-then-learn over a chronological stream.

    For each event the current model ranks items for ``u`` (rows for unseen
    users/items are appended first), the hit is scored, and the interaction
    is then ingested. ``model`` itself is not modified.
    """
    updater = updater or OnlineUpdater(model, train, weights, config)
    report = EvalReport(cutoff)
    for u, i, t in test_stream:
        new_user = u >= updater.n_users
        new_item = i >= updater.n_items
        while u >= updater.n_users:
            updater.add_user()
        while i >= updater.n_items:
            updater.add_item()
        hist = updater.history_len(u)
        excluded = None
        if exclude_train and hist:
            excluded = np.array([updater._e_item.buf[e] for e in updater.user_entries[u]])
        rank = rank_of(updater.scores(u), i, excluded)
        hr, nd = _metrics(rank, cutoff)
        report.per_event.append({"u": u, "i": i, "t": t, "rank": rank, "hr": hr, "ndcg": nd,
                                 "history_len": hist, "new_user": new_user, "new_item": new_item})
        updater.ingest(u, i, t)
    return report
