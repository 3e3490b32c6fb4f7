"""Popularity-aware confidence weights for missing entries."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ingest import InteractionDataset

DEFAULT_ALPHA = 0.5
DEFAULT_C0 = 512.0


class InvalidInputError(ValueError):
    pass


@dataclass(frozen=True)
class ConfidenceWeights:
    """Per-item missing-data confidence ``c`` and the settings that made it."""

    c: np.ndarray
    c0: float
    alpha: float
    observed_default: float = 1.0

    @property
    def n_items(self) -> int:
        return len(self.c)

    def extended(self, n_items: int) -> "ConfidenceWeights":
        """Pad with zero confidence for items appended after training."""
        if n_items <= len(self.c):
            return self
        c = np.zeros(n_items)
        c[: len(self.c)] = self.c
        return ConfidenceWeights(c, self.c0, self.alpha, self.observed_default)

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for i, ci in enumerate(self.c):
                fh.write(f"{i} {ci!r}\n")


def item_popularity(train: InteractionDataset) -> np.ndarray:
    """Fraction of all interactions that fall on each item."""
    if train.nnz == 0:
        raise InvalidInputError("popularity of an empty dataset is undefined")
    counts = train.item_degree().astype(np.float64)
    return counts / counts.sum()


def confidence_vector(
    f: np.ndarray,
    c0: float = DEFAULT_C0,
    alpha: float = DEFAULT_ALPHA,
    observed_default: float = 1.0,
) -> ConfidenceWeights:
    """``c_i = c0 * f_i**alpha / sum_j f_j**alpha``.

    Items with ``f_i == 0`` always get zero confidence, including when
    ``alpha == 0`` (so ``0**0`` is treated as 0 here).
    """
    f = np.asarray(f, dtype=np.float64)
    if c0 <= 0:
        raise InvalidInputError("c0 must be positive")
    if alpha < 0:
        raise InvalidInputError("alpha must be non-negative")
    if np.any(f < 0) or not np.any(f > 0):
        raise InvalidInputError("popularity vector needs a positive entry and no negatives")
    powered = np.zeros_like(f)
    nz = f > 0
    powered[nz] = f[nz] ** alpha
    c = c0 * powered / powered.sum()
    return ConfidenceWeights(c, float(c0), float(alpha), float(observed_default))


def popularity_weights(train: InteractionDataset, c0: float = DEFAULT_C0, alpha: float = DEFAULT_ALPHA) -> ConfidenceWeights:
    return confidence_vector(item_popularity(train), c0, alpha)
