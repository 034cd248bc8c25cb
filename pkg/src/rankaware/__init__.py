"""Rank-aware temporal attention for pairwise skill ranking of long videos.

Works on precomputed per-segment features: a video is a ``T x D`` float64
matrix. See ``RankAwareRanker`` for the scikit-learn style entry point and
``rankaware.cli`` for the command line.
"""

from .data import PairAnnotation, SplitSpec, VideoRecord, make_kfold, make_split, transitive_closure
from .estimator import RankAwareRanker
from .eval import EvalReport, ablation_suite, filter_correlation, pairwise_accuracy
from .exceptions import DataError, NumericError, RankAwareError, ShapeError
from .losses import LossConfig, PairLossBreakdown, pair_total_loss
from .model import BranchScores, RankModel, load_checkpoint, save_checkpoint
from .synth import SynthSpec, generate
from .train import TrainConfig, TrainHistory, train

__version__ = "0.1.0"

__all__ = [
    "BranchScores",
    "DataError",
    "EvalReport",
    "LossConfig",
    "NumericError",
    "PairAnnotation",
    "PairLossBreakdown",
    "RankAwareError",
    "RankAwareRanker",
    "RankModel",
    "ShapeError",
    "SplitSpec",
    "SynthSpec",
    "TrainConfig",
    "TrainHistory",
    "VideoRecord",
    "ablation_suite",
    "filter_correlation",
    "generate",
    "load_checkpoint",
    "make_kfold",
    "make_split",
    "pair_total_loss",
    "pairwise_accuracy",
    "save_checkpoint",
    "train",
    "transitive_closure",
]
