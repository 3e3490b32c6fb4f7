"""Interaction log loading, k-core filtering, dense indexing and splits."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

Record = tuple[str, str, int]


class ParseError(ValueError):
    """Malformed line in an interaction file."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


@dataclass
class RawInteractions:
    records: list[Record] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)


def load_interactions(path: str | Path, format: str = "tsv") -> RawInteractions:
    """Read ``user<sep>item<sep>timestamp`` lines.

    Extra columns are ignored, blank lines and ``#`` comments skipped.
    Raises ``OSError`` if the file cannot be read and ``ParseError``
    on a malformed line.
    """
    if format not in ("tsv", "csv"):
        raise ValueError(f"unknown format {format!r}")
    sep = "\t" if format == "tsv" else ","
    records: list[Record] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split(sep)
            if len(parts) < 3:
                raise ParseError(line_no, f"expected 3 fields, got {len(parts)}")
            user, item, ts = parts[0].strip(), parts[1].strip(), parts[2].strip()
            try:
                t = int(ts)
            except ValueError:
                try:
                    tf = float(ts)
                except ValueError:
                    raise ParseError(line_no, f"bad timestamp {ts!r}") from None
                if not math.isfinite(tf) or tf != int(tf):
                    raise ParseError(line_no, f"bad timestamp {ts!r}") from None
                t = int(tf)
            records.append((user, item, t))
    return RawInteractions(records)


def kcore_filter(raw: RawInteractions, threshold: int = 10) -> RawInteractions:
    """Drop users and items with fewer than ``threshold`` distinct partners.

    Deletion is repeated until nothing changes, so every survivor meets the
    threshold. Repeat records of surviving pairs are kept.
    """
    if threshold < 1:
        raise ValueError("threshold must be >= 1")
    pairs = {(u, i) for u, i, _ in raw.records}
    while True:
        ucount = Counter(u for u, _ in pairs)
        icount = Counter(i for _, i in pairs)
        kept = {(u, i) for u, i in pairs if ucount[u] >= threshold and icount[i] >= threshold}
        if len(kept) == len(pairs):
            break
        pairs = kept
    return RawInteractions([rec for rec in raw.records if (rec[0], rec[1]) in pairs])


class InteractionDataset:
    """Implicit user-item matrix indexed by user (CSR) and by item (CSC).

    Entries are stored in user-major order, items ascending within a row.
    ``item_pos`` maps every item-side slot back to its user-side position,
    so per-entry state (weights, prediction cache) lives in one array.
    ``seq`` is the stable input position of each entry, used for ties.
    """

    def __init__(
        self,
        n_users: int,
        n_items: int,
        users: np.ndarray,
        items: np.ndarray,
        times: np.ndarray,
        seq: np.ndarray | None = None,
        weights: np.ndarray | None = None,
        user_keys: Sequence[str] | None = None,
        item_keys: Sequence[str] | None = None,
    ):
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        times = np.asarray(times, dtype=np.int64)
        nnz = len(users)
        if seq is None:
            seq = np.arange(nnz, dtype=np.int64)
        seq = np.asarray(seq, dtype=np.int64)
        if weights is None:
            weights = np.ones(nnz)
        weights = np.asarray(weights, dtype=np.float64)
        if nnz and (users.min() < 0 or users.max() >= n_users or items.min() < 0 or items.max() >= n_items):
            raise ValueError("entry id out of range")

        order = np.lexsort((items, users))
        self.n_users = int(n_users)
        self.n_items = int(n_items)
        self.indices = items[order]
        self.times = times[order]
        self.seq = seq[order]
        self.w = weights[order]
        self.r = np.ones(nnz)
        self.entry_user = users[order]
        if nnz > 1:
            dup = (np.diff(self.entry_user) == 0) & (np.diff(self.indices) == 0)
            if dup.any():
                raise ValueError("duplicate (user, item) entries")
        self.indptr = np.zeros(self.n_users + 1, dtype=np.int64)
        np.cumsum(np.bincount(self.entry_user, minlength=self.n_users), out=self.indptr[1:])

        iorder = np.lexsort((self.entry_user, self.indices))
        self.item_pos = iorder.astype(np.int64)
        self.item_users = self.entry_user[iorder]
        self.item_indptr = np.zeros(self.n_items + 1, dtype=np.int64)
        np.cumsum(np.bincount(self.indices, minlength=self.n_items), out=self.item_indptr[1:])

        self.user_keys = list(user_keys) if user_keys is not None else [str(u) for u in range(self.n_users)]
        self.item_keys = list(item_keys) if item_keys is not None else [str(i) for i in range(self.n_items)]

    @property
    def nnz(self) -> int:
        return len(self.indices)

    @property
    def shape(self) -> tuple[int, int]:
        return self.n_users, self.n_items

    def user_items(self, u: int) -> np.ndarray:
        return self.indices[self.indptr[u] : self.indptr[u + 1]]

    def item_users_of(self, i: int) -> np.ndarray:
        return self.item_users[self.item_indptr[i] : self.item_indptr[i + 1]]

    def user_degree(self) -> np.ndarray:
        return np.diff(self.indptr)

    def item_degree(self) -> np.ndarray:
        return np.diff(self.item_indptr)

    def user_index(self, u: int) -> list[tuple[int, float, float, int]]:
        """``R_u`` as sorted ``(i, r, w, t)`` tuples."""
        lo, hi = self.indptr[u], self.indptr[u + 1]
        return [
            (int(self.indices[p]), float(self.r[p]), float(self.w[p]), int(self.times[p]))
            for p in range(lo, hi)
        ]

    def item_index(self, i: int) -> list[tuple[int, float, float, int]]:
        """``R_i`` as sorted ``(u, r, w, t)`` tuples."""
        lo, hi = self.item_indptr[i], self.item_indptr[i + 1]
        return [
            (int(self.item_users[k]), float(self.r[p]), float(self.w[p]), int(self.times[p]))
            for k, p in zip(range(lo, hi), self.item_pos[lo:hi])
        ]

    def entries(self) -> list[tuple[int, int, int]]:
        """All ``(u, i, t)`` triples in stable input order."""
        order = np.argsort(self.seq, kind="stable")
        return [(int(self.entry_user[p]), int(self.indices[p]), int(self.times[p])) for p in order]

    def check_transpose(self) -> None:
        """Raise ``AssertionError`` unless both indexes hold the same entries."""
        by_user = sorted(zip(self.entry_user.tolist(), self.indices.tolist()))
        by_item = sorted(
            (int(u), int(self.indices[p])) for u, p in zip(self.item_users, self.item_pos)
        )
        assert by_user == by_item, "user and item indexes disagree"
        for i in range(self.n_items):
            lo, hi = self.item_indptr[i], self.item_indptr[i + 1]
            assert np.all(self.indices[self.item_pos[lo:hi]] == i)

    def save(self, path: str | Path) -> None:
        """Write the ``M N nnz`` header and one ``u i t`` line per entry."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"{self.n_users} {self.n_items} {self.nnz}\n")
            for u, i, t in self.entries():
                fh.write(f"{u} {i} {t}\n")

    @classmethod
    def load(cls, path: str | Path) -> "InteractionDataset":
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().split()
            if len(header) != 3:
                raise ParseError(1, "expected header 'M N nnz'")
            m, n, nnz = (int(x) for x in header)
            data = np.loadtxt(fh, dtype=np.int64, ndmin=2) if nnz else np.zeros((0, 3), dtype=np.int64)
        if data.shape != (nnz, 3):
            raise ParseError(2, f"expected {nnz} 'u i t' rows, got {data.shape[0]}")
        return cls(m, n, data[:, 0], data[:, 1], data[:, 2])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, InteractionDataset):
            return NotImplemented
        return (
            self.shape == other.shape
            and self.entries() == other.entries()
            and np.array_equal(self.w, other.w)
        )

    def __repr__(self) -> str:
        return f"InteractionDataset(M={self.n_users}, N={self.n_items}, nnz={self.nnz})"


def build_dataset(raw: RawInteractions | Iterable[Record]) -> InteractionDataset:
    """Assign dense ids in first-appearance order and collapse repeats.

    A repeated pair keeps its latest timestamp; among equal timestamps the
    later record wins. The kept record's input position becomes the entry's
    tie-break sequence number.
    """
    records = raw.records if isinstance(raw, RawInteractions) else list(raw)
    user_ids: dict[str, int] = {}
    item_ids: dict[str, int] = {}
    latest: dict[tuple[int, int], tuple[int, int]] = {}
    for pos, (uk, ik, t) in enumerate(records):
        u = user_ids.setdefault(uk, len(user_ids))
        i = item_ids.setdefault(ik, len(item_ids))
        prev = latest.get((u, i))
        if prev is None or t >= prev[0]:
            latest[(u, i)] = (int(t), pos)
    keys = list(latest)
    users = np.array([k[0] for k in keys], dtype=np.int64)
    items = np.array([k[1] for k in keys], dtype=np.int64)
    times = np.array([latest[k][0] for k in keys], dtype=np.int64)
    seq = np.array([latest[k][1] for k in keys], dtype=np.int64)
    return InteractionDataset(
        len(user_ids), len(item_ids), users, items, times, seq,
        user_keys=list(user_ids), item_keys=list(item_ids),
    )


@dataclass
class SplitPair:
    """Training matrix plus the ordered held-out ``(u, i, t)`` events.

    Held-out users/items unseen in training carry ids ``>= train.n_users``
    / ``>= train.n_items``; ``user_keys``/``item_keys`` cover all ids.
    """

    train: InteractionDataset
    test: list[tuple[int, int, int]]
    user_keys: list[str]
    item_keys: list[str]

    @property
    def n_users(self) -> int:
        return len(self.user_keys)

    @property
    def n_items(self) -> int:
        return len(self.item_keys)

    def is_new_user(self, u: int) -> bool:
        return u >= self.train.n_users

    def is_new_item(self, i: int) -> bool:
        return i >= self.train.n_items


def split_leave_one_out(data: InteractionDataset) -> SplitPair:
    """Hold out each user's latest interaction (ties: later input wins)."""
    held = np.zeros(data.nnz, dtype=bool)
    for u in range(data.n_users):
        lo, hi = data.indptr[u], data.indptr[u + 1]
        if lo == hi:
            raise ValueError(f"user {u} has no interactions")
        rows = np.arange(lo, hi)
        best = rows[np.lexsort((data.seq[lo:hi], data.times[lo:hi]))[-1]]
        held[best] = True
    keep = ~held
    train = InteractionDataset(
        data.n_users, data.n_items,
        data.entry_user[keep], data.indices[keep], data.times[keep],
        data.seq[keep], data.w[keep], data.user_keys, data.item_keys,
    )
    test = [(int(data.entry_user[p]), int(data.indices[p]), int(data.times[p])) for p in np.flatnonzero(held)]
    return SplitPair(train, test, list(data.user_keys), list(data.item_keys))


def split_chronological(data: InteractionDataset, test_fraction: float = 0.1) -> SplitPair:
    """Train on the earliest interactions, stream the rest in time order.

    Ids are re-densified: training users/items keep their relative order
    and unseen ones are appended by first appearance in the test stream.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must be in (0, 1)")
    nnz = data.nnz
    order = np.lexsort((data.seq, data.times))
    n_train = min(nnz, math.ceil((1.0 - test_fraction) * nnz - 1e-9))
    tr, te = order[:n_train], order[n_train:]

    umap = {int(u): k for k, u in enumerate(np.unique(data.entry_user[tr]))}
    imap = {int(i): k for k, i in enumerate(np.unique(data.indices[tr]))}
    m_train, n_train_items = len(umap), len(imap)
    for p in te:
        umap.setdefault(int(data.entry_user[p]), len(umap))
        imap.setdefault(int(data.indices[p]), len(imap))
    user_keys = [""] * len(umap)
    for old, new in umap.items():
        user_keys[new] = data.user_keys[old]
    item_keys = [""] * len(imap)
    for old, new in imap.items():
        item_keys[new] = data.item_keys[old]

    train = InteractionDataset(
        m_train, n_train_items,
        np.array([umap[int(u)] for u in data.entry_user[tr]], dtype=np.int64),
        np.array([imap[int(i)] for i in data.indices[tr]], dtype=np.int64),
        data.times[tr], data.seq[tr], data.w[tr],
        user_keys[:m_train], item_keys[:n_train_items],
    )
    test = [
        (umap[int(data.entry_user[p])], imap[int(data.indices[p])], int(data.times[p]))
        for p in te
    ]
    return SplitPair(train, test, user_keys, item_keys)
