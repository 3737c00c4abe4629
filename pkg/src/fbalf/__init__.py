"""Bias-aware federated matrix factorization with hybrid filling.

Each user keeps a private factor vector and bias; a server keeps item factors
and item biases and only ever sees item-keyed gradients.  Hybrid filling pads
each upload with synthetic items so the server cannot tell rated items apart.
"""

from .client import ClientState, DivergenceError, GradientUpload, init_client, local_train_round
from .data import (
    IngestReport,
    ParseError,
    RatingDataset,
    SplitPlan,
    filter_min_degree,
    from_arrays,
    make_kfold,
    mark_cold,
    parse_ratings,
    split_holdout,
)
from .model import HyperParams, element_loss, item_side_gradients, predict, user_side_gradients
from .server import ServerState, Snapshot, UploadRejected, apply_upload, init_server, snapshot
from .stats import MetricPair, friedman_ranks, loss_win, score, wilcoxon_signed_rank
from .synthetic import generate_synthetic, planted_offset_fixture, standard_fixture
from .training import TrainReport, ablation_suite, centralized_oracle, run_training

__all__ = [
    "ClientState", "DivergenceError", "GradientUpload", "HyperParams", "IngestReport",
    "MetricPair", "ParseError", "RatingDataset", "ServerState", "Snapshot", "SplitPlan",
    "TrainReport", "UploadRejected", "ablation_suite", "apply_upload", "centralized_oracle",
    "element_loss", "filter_min_degree", "friedman_ranks", "from_arrays", "generate_synthetic",
    "init_client", "init_server", "item_side_gradients", "local_train_round", "loss_win",
    "make_kfold", "mark_cold", "parse_ratings", "planted_offset_fixture", "predict",
    "run_training", "score", "snapshot", "split_holdout", "standard_fixture",
    "user_side_gradients", "wilcoxon_signed_rank",
]

__version__ = "0.1.0"
