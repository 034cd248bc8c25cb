"""Pairwise accuracy, branch comparison, filter correlation, attention export, ablations."""

from __future__ import annotations

import io
import itertools
import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from ._io import atomic_write_text
from .exceptions import UnknownVideoError

SCORERS = ("fused", "high", "low", "uniform")


@dataclass
class EvalReport:
    pairwise_accuracy: float
    per_branch_accuracy: dict
    n_pairs: int
    tie_count: int
    scorer: str = "fused"

    def to_records(self) -> str:
        """One JSON record per metric."""
        lines = [
            {"metric": "pairwise_accuracy", "scorer": self.scorer, "value": self.pairwise_accuracy},
            {"metric": "n_pairs", "value": self.n_pairs},
            {"metric": "tie_count", "value": self.tie_count},
        ]
        lines += [{"metric": "branch_accuracy", "scorer": k, "value": v} for k, v in self.per_branch_accuracy.items()]
        return "".join(json.dumps(rec) + "\n" for rec in lines)


def _features(videos) -> dict:
    if isinstance(videos, dict):
        return {k: np.asarray(getattr(v, "features", v), dtype=np.float64) for k, v in videos.items()}
    return {v.id: v.features for v in videos}


def branch_score_table(model, videos, ids) -> dict[str, np.ndarray]:
    """Per-video scores of every scorer, in the order of ``ids``."""
    fwd = model.forward([videos[i] for i in ids])
    s_plus, s_minus = fwd.s_plus, fwd.s_minus
    return {
        # fused uses the attention branches only
        "fused": s_plus + s_minus,
        "high": s_plus,
        "low": s_minus,
        "uniform": fwd.u,
    }


def accuracy_from_scores(scores, pairs) -> tuple[float, int]:
    """Fraction of pairs with ``score[better] > score[worse]``; ties count as wrong."""
    better = np.array([scores[p.better] for p in pairs])
    worse = np.array([scores[p.worse] for p in pairs])
    return float(np.mean(better > worse)), int(np.sum(better == worse))


def pairwise_accuracy(model, videos, pairs, scorer: str = "fused") -> EvalReport:
    if scorer not in SCORERS:
        raise ValueError(f"scorer must be one of {SCORERS}")
    pairs = list(pairs)
    if not pairs:
        raise ValueError("no pairs to evaluate")
    videos = _features(videos)
    ids = sorted({v for p in pairs for v in (p.better, p.worse)})
    missing = [i for i in ids if i not in videos]
    if missing:
        raise UnknownVideoError(f"unknown video ids {missing}")
    table = branch_score_table(model, videos, ids)
    per_branch, ties = {}, {}
    for name, values in table.items():
        per_branch[name], ties[name] = accuracy_from_scores(dict(zip(ids, values)), pairs)
    return EvalReport(per_branch[scorer], per_branch, len(pairs), ties[scorer], scorer)


@dataclass
class CorrelationReport:
    matrix: np.ndarray  # [k, k'] = corr(high filter k, low filter k')
    mean: float
    max: float

    def to_csv(self) -> str:
        K = self.matrix.shape[0]
        rows = ["high_filter," + ",".join(f"low_{k}" for k in range(K))]
        rows += [f"high_{k}," + ",".join(repr(float(x)) for x in self.matrix[k]) for k in range(K)]
        return "\n".join(rows) + "\n"


def pearson(a, b) -> float:
    """Pearson correlation; 0 when either vector has zero variance."""
    a = np.asarray(a, dtype=np.float64) - np.mean(a)
    b = np.asarray(b, dtype=np.float64) - np.mean(b)
    denom = np.sqrt(np.dot(a, a) * np.dot(b, b))
    if denom == 0.0:
        return 0.0
    return float(np.clip(np.dot(a, b) / denom, -1.0, 1.0))


def _video_list(videos):
    if isinstance(videos, dict):
        return [np.asarray(getattr(v, "features", v)) for v in videos.values()]
    return [np.asarray(getattr(v, "features", v)) for v in videos]


def filter_correlation(model, videos) -> CorrelationReport:
    """Cross-module filter correlation, computed per video then averaged."""
    feats = _video_list(videos)
    fwd = model.forward(feats)
    K = model.K
    total = np.zeros((K, K))
    for A_high, A_low in zip(fwd.attention("high"), fwd.attention("low")):
        for k, kk in itertools.product(range(K), range(K)):
            total[k, kk] += pearson(A_high[k], A_low[kk])
    matrix = total / len(feats)
    return CorrelationReport(matrix, float(matrix.mean()), float(matrix.max()))


def within_module_correlation(model, videos) -> float:
    """Mean correlation over distinct filter pairs inside each module (NaN for K=1)."""
    feats = _video_list(videos)
    K = model.K
    if K < 2:
        return float("nan")
    fwd = model.forward(feats)
    values = []
    for module in ("high", "low"):
        for A in fwd.attention(module):
            values.extend(pearson(A[k], A[kk]) for k, kk in itertools.combinations(range(K), 2))
    return float(np.mean(values))


def attention_table(model, features) -> str:
    features = np.asarray(features, dtype=np.float64)
    fwd = model.forward([features])
    A_high, A_low = fwd.attention("high")[0], fwd.attention("low")[0]
    K = model.K
    header = ["segment", "alpha_high", "alpha_low"]
    header += [f"high_{k}" for k in range(K)] + [f"low_{k}" for k in range(K)]
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    alpha_high, alpha_low = A_high.sum(axis=0), A_low.sum(axis=0)
    for t in range(features.shape[0]):
        row = [alpha_high[t], alpha_low[t], *A_high[:, t], *A_low[:, t]]
        buf.write(str(t) + "," + ",".join(repr(float(x)) for x in row) + "\n")
    return buf.getvalue()


def export_attention(model, video, path) -> Path:
    """Plot-ready CSV: one row per segment with module totals and per-filter weights."""
    path = Path(path)
    atomic_write_text(path, attention_table(model, getattr(video, "features", video)))
    return path


# ----------------------------------------------------------------- ablations

ABLATIONS = {
    "rank-only": dict(use_diversity=False, use_disp=False, use_rank_aware=False),
    "+diversity": dict(use_diversity=True, use_disp=False, use_rank_aware=False),
    "+disparity": dict(use_diversity=True, use_disp=True, use_rank_aware=False),
    "+rank-aware": dict(use_diversity=True, use_disp=True, use_rank_aware=True),
}
K_VALUES = (1, 2, 3, 4)


@dataclass
class AblationRow:
    config: str
    seed: int
    K: int
    accuracy: float
    high: float
    low: float
    uniform: float


def ablation_configs(base_cfg, k_values=K_VALUES) -> list[tuple[str, object]]:
    """Loss ablations at the base K, then the full loss at every K in ``k_values``."""
    out = [(name, replace(base_cfg, **flags)) for name, flags in ABLATIONS.items()]
    full = replace(base_cfg, **ABLATIONS["+rank-aware"])
    out += [(f"K={k}", replace(full, K=k)) for k in k_values if k != base_cfg.K]
    return out


def ablation_suite(train_videos, train_pairs, test_pairs, base_cfg, seeds, k_values=K_VALUES,
                   test_videos=None) -> tuple[list[AblationRow], list[dict]]:
    """Train every ablation configuration per seed; returns raw rows and a mean/std summary."""
    from .train import train

    seeds = list(seeds)
    if not seeds:
        raise ValueError("ablation_suite needs at least one seed")
    test_videos = train_videos if test_videos is None else test_videos
    rows = []
    for seed in seeds:
        for name, cfg in ablation_configs(base_cfg, k_values):
            model, _ = train(train_videos, train_pairs, replace(cfg, seed=seed))
            rep = pairwise_accuracy(model, test_videos, test_pairs)
            b = rep.per_branch_accuracy
            rows.append(AblationRow(name, seed, cfg.K, rep.pairwise_accuracy, b["high"], b["low"], b["uniform"]))
    return rows, summarize(rows)


def summarize(rows) -> list[dict]:
    out = []
    for name in dict.fromkeys(r.config for r in rows):
        acc = np.array([r.accuracy for r in rows if r.config == name])
        out.append({"config": name, "n": int(acc.size), "mean": float(acc.mean()), "std": float(acc.std())})
    return out


def ablation_csv(rows) -> str:
    keys = list(asdict(rows[0])) if rows else list(AblationRow.__dataclass_fields__)
    lines = [",".join(keys)]
    lines += [",".join(str(v) for v in asdict(r).values()) for r in rows]
    return "\n".join(lines) + "\n"
