"""scikit-learn compatible front end.

``X`` is a sequence of per-video segment matrices (T_i x D, T may vary) and
``y`` an ``(n_pairs, 2)`` integer array of ``(better, worse)`` row indices
into ``X``.
"""

from __future__ import annotations

from dataclasses import fields, replace

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .data import PairAnnotation
from .eval import within_module_correlation
from .exceptions import DataError, ShapeError
from .losses import LossConfig
from .model import RankModel
from .train import TrainConfig, train


def check_videos(X, n_features: int | None = None) -> list[np.ndarray]:
    """Validate a sequence of T_i x D matrices: 2-D, T_i >= 1, common D, finite."""
    if isinstance(X, np.ndarray) and X.ndim == 3:
        X = list(X)
    try:
        videos = [np.asarray(v, dtype=np.float64) for v in X]
    except (TypeError, ValueError) as exc:
        raise ShapeError(f"videos must be numeric matrices: {exc}") from exc
    if not videos:
        raise ShapeError("no videos given")
    for i, v in enumerate(videos):
        if v.ndim != 2 or v.shape[0] < 1:
            raise ShapeError(f"video {i} must be a non-empty T x D matrix, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ShapeError(f"video {i} contains non-finite values")
    dims = {v.shape[1] for v in videos}
    if len(dims) != 1:
        raise ShapeError(f"videos have mixed feature dims {sorted(dims)}")
    if n_features is not None and dims != {n_features}:
        raise ShapeError(f"videos have {dims.pop()} features, estimator was fitted with {n_features}")
    return videos


def check_pairs(y, n_videos: int) -> np.ndarray:
    """Validate ``(better, worse)`` index pairs into a list of ``n_videos`` videos."""
    pairs = np.asarray(y)
    if pairs.ndim != 2 or pairs.shape[1] != 2 or pairs.shape[0] < 1:
        raise ShapeError(f"pairs must have shape (n_pairs, 2), got {pairs.shape}")
    if not np.issubdtype(pairs.dtype, np.integer):
        raise ShapeError("pair indices must be integers")
    if pairs.min() < 0 or pairs.max() >= n_videos:
        raise DataError(f"pair indices must lie in [0, {n_videos})")
    if np.any(pairs[:, 0] == pairs[:, 1]):
        raise DataError("a pair compares a video with itself")
    return pairs.astype(np.int64)


class RankAwareRanker(TransformerMixin, BaseEstimator):
    """Rank-aware attention ranker over per-segment video features.

    ``predict`` returns the fused rank score ``s_plus + s_minus``;
    ``transform`` returns the three branch scores ``[s_plus, s_minus, u]``.
    """

    def __init__(self, K=3, hidden=256, m=1.0, m2=0.1, m3=0.3, lam=0.1, lr=1e-4, batch_size=128,
                 epochs=2000, noise_sigma=0.01, alternation_period=1, alternation_unit="epoch",
                 use_disp=True, use_rank_aware=True, use_diversity=True, attention_rank_loss="auto",
                 random_state=0):
        self.K = K
        self.hidden = hidden
        self.m = m
        self.m2 = m2
        self.m3 = m3
        self.lam = lam
        self.lr = lr
        self.batch_size = batch_size
        self.epochs = epochs
        self.noise_sigma = noise_sigma
        self.alternation_period = alternation_period
        self.alternation_unit = alternation_unit
        self.use_disp = use_disp
        self.use_rank_aware = use_rank_aware
        self.use_diversity = use_diversity
        self.attention_rank_loss = attention_rank_loss
        self.random_state = random_state

    def _train_config(self) -> TrainConfig:
        params = self.get_params()
        own = {f.name for f in fields(TrainConfig)}
        kwargs = {k: v for k, v in params.items() if k in own}
        seed = 0 if self.random_state is None else int(self.random_state)
        return TrainConfig(loss=LossConfig(self.m, self.m2, self.m3, self.lam), seed=seed, **kwargs)

    def fit(self, X, y, out_dir=None, log_path=None):
        videos = check_videos(X)
        pairs = check_pairs(y, len(videos))
        cfg = replace(self._train_config(), T_default=videos[0].shape[0])
        ids = [str(i) for i in range(len(videos))]
        annotations = [PairAnnotation(ids[b], ids[w]) for b, w in pairs]
        self.model_, self.history_ = train(dict(zip(ids, videos)), annotations, cfg,
                                           out_dir=out_dir, log_path=log_path)
        self.n_features_in_ = videos[0].shape[1]
        return self

    @classmethod
    def from_model(cls, model: RankModel, **params) -> "RankAwareRanker":
        est = cls(K=model.K, hidden=model.H, **params)
        est.model_ = model
        est.n_features_in_ = model.D
        return est

    def _videos(self, X):
        check_is_fitted(self, "model_")
        return check_videos(X, self.n_features_in_)

    def predict(self, X) -> np.ndarray:
        videos = self._videos(X)
        return self.model_.rank_scores(videos)

    decision_function = predict

    def transform(self, X) -> np.ndarray:
        videos = self._videos(X)
        fwd = self.model_.forward(videos)
        return np.column_stack([fwd.s_plus, fwd.s_minus, fwd.u])

    def attention(self, X) -> tuple[list[np.ndarray], list[np.ndarray]]:
        """Per-video K x T attention matrices of the high and low modules."""
        videos = self._videos(X)
        fwd = self.model_.forward(videos)
        return fwd.attention("high"), fwd.attention("low")

    def score(self, X, y) -> float:
        """Pairwise accuracy of the fused score; ties count as errors."""
        R = self.predict(X)
        pairs = check_pairs(y, len(R))
        return float(np.mean(R[pairs[:, 0]] > R[pairs[:, 1]]))

    def filter_redundancy(self, X) -> float:
        videos = self._videos(X)
        return within_module_correlation(self.model_, videos)
