"""Fast element-wise ALS for implicit-feedback matrix factorization."""

__version__ = "0.1.0"

from .eals import TrainConfig, TrainTrace, objective_fast, objective_naive, sweep, train
from .evaluation import EvalReport, evaluate_offline, evaluate_online, hit_ratio, ndcg
from .ingest import (
    InteractionDataset,
    RawInteractions,
    SplitPair,
    build_dataset,
    kcore_filter,
    load_interactions,
    split_chronological,
    split_leave_one_out,
)
from .model import FactorModel, init_model
from .online import OnlineConfig, OnlineUpdater
from .weighting import ConfidenceWeights, confidence_vector, item_popularity, popularity_weights

__all__ = [
    "ConfidenceWeights", "EvalReport", "FactorModel", "InteractionDataset", "OnlineConfig",
    "OnlineUpdater", "RawInteractions", "SplitPair", "TrainConfig", "TrainTrace", "build_dataset",
    "confidence_vector", "evaluate_offline", "evaluate_online", "hit_ratio", "init_model",
    "item_popularity", "kcore_filter", "load_interactions", "ndcg", "objective_fast",
    "objective_naive", "popularity_weights", "split_chronological", "split_leave_one_out", "sweep",
    "train",
]
