"""Pairwise hinge losses for the three-branch ranker and their combination.

Hinges use the subgradient convention ``d max(0, a) / da = 0`` at ``a == 0``.
Batch losses are averaged over the pairs of the batch.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .attention import diversity_loss

TERMS = (
    "rank_plus",
    "rank_minus",
    "rank_uniform",
    "disp_plus",
    "disp_minus",
    "rank_aware",
    "div_plus",
    "div_minus",
)
RANKING_TERMS = ("rank_plus", "rank_minus", "rank_uniform")


@dataclass(frozen=True)
class LossConfig:
    m: float = 1.0
    m2: float = 0.1
    m3: float = 0.3
    lam: float = 0.1

    def __post_init__(self):
        if min(self.m, self.m2, self.m3) < 0:
            raise ValueError("margins must be non-negative")
        if not self.m3 > self.m2:
            raise ValueError("the rank-aware margin m3 must exceed the disparity margin m2")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")


@dataclass
class PairLossBreakdown:
    rank_plus: float = 0.0
    rank_minus: float = 0.0
    rank_uniform: float = 0.0
    disp_plus: float = 0.0
    disp_minus: float = 0.0
    rank_aware: float = 0.0
    div_plus: float = 0.0
    div_minus: float = 0.0
    total: float = 0.0

    def as_dict(self) -> dict[str, float]:
        return asdict(self)

    @classmethod
    def field_names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))


def term_weights(cfg: LossConfig, disp: bool = True, rank_aware: bool = True, diversity: bool = True) -> dict:
    """Multiplier of every term in the total; disabled terms get weight 0."""
    w = {name: 1.0 for name in TERMS}
    w["div_plus"] = w["div_minus"] = cfg.lam if diversity else 0.0
    if not disp:
        w["disp_plus"] = w["disp_minus"] = 0.0
    if not rank_aware:
        w["rank_aware"] = 0.0
    return w


def margin_rank_loss(s_i: float, s_j: float, m: float) -> float:
    return max(0.0, m - s_i + s_j)


def disparity_loss(s_i: float, s_j: float, u_i: float, u_j: float, m2: float) -> float:
    return max(0.0, m2 - (s_i - s_j) + (u_i - u_j))


def rank_aware_loss(s_plus_i: float, s_minus_j: float, u_i: float, u_j: float, m3: float) -> float:
    # crosses branches: high-skill score of the better video vs low-skill score of the worse one
    return max(0.0, m3 - (s_plus_i - s_minus_j) + (u_i - u_j))


def pair_total_loss(scores_i, scores_j, A_i_plus, A_i_minus, A_j_plus, A_j_minus, cfg: LossConfig,
                    weights: dict | None = None) -> PairLossBreakdown:
    """All loss terms for one ordered pair, video ``i`` ranked above video ``j``."""
    w = term_weights(cfg) if weights is None else weights
    out = PairLossBreakdown(
        rank_plus=margin_rank_loss(scores_i.s_plus, scores_j.s_plus, cfg.m),
        rank_minus=margin_rank_loss(scores_i.s_minus, scores_j.s_minus, cfg.m),
        rank_uniform=margin_rank_loss(scores_i.u, scores_j.u, cfg.m),
        disp_plus=disparity_loss(scores_i.s_plus, scores_j.s_plus, scores_i.u, scores_j.u, cfg.m2),
        disp_minus=disparity_loss(scores_i.s_minus, scores_j.s_minus, scores_i.u, scores_j.u, cfg.m2),
        rank_aware=rank_aware_loss(scores_i.s_plus, scores_j.s_minus, scores_i.u, scores_j.u, cfg.m3),
        div_plus=diversity_loss(A_i_plus) + diversity_loss(A_j_plus),
        div_minus=diversity_loss(A_i_minus) + diversity_loss(A_j_minus),
    )
    out.total = sum(w[name] * getattr(out, name) for name in TERMS)
    return out


def _hinge(arg):
    active = arg > 0
    return np.where(active, arg, 0.0), active.astype(float)


def batch_pair_losses(s_plus, s_minus, u, div_plus, div_minus, better, worse, cfg: LossConfig, weights: dict,
                      cross_offset: float = 0.0):
    """Mean pair losses over a batch, with gradients w.r.t. every per-video quantity.

    ``s_plus``, ``s_minus``, ``u``, ``div_plus``, ``div_minus`` are per-video
    arrays; ``better``/``worse`` index them per pair. Same-branch terms only see
    score differences, so callers may pass bias-free scores and supply the
    bias difference of the high and low ranking layers as ``cross_offset``,
    which enters the rank-aware term only.

    Returns ``(objective, breakdown, grads)`` where ``objective`` is the
    weighted total and ``grads`` maps each input name to d objective / d input.
    """
    better = np.asarray(better)
    worse = np.asarray(worse)
    B = better.size
    n = s_plus.shape[0]
    terms = {}
    coef = {}

    terms["rank_plus"], coef["rank_plus"] = _hinge(cfg.m - s_plus[better] + s_plus[worse])
    terms["rank_minus"], coef["rank_minus"] = _hinge(cfg.m - s_minus[better] + s_minus[worse])
    terms["rank_uniform"], coef["rank_uniform"] = _hinge(cfg.m - u[better] + u[worse])
    u_gap = u[better] - u[worse]
    terms["disp_plus"], coef["disp_plus"] = _hinge(cfg.m2 - (s_plus[better] - s_plus[worse]) + u_gap)
    terms["disp_minus"], coef["disp_minus"] = _hinge(cfg.m2 - (s_minus[better] - s_minus[worse]) + u_gap)
    terms["rank_aware"], coef["rank_aware"] = _hinge(cfg.m3 - (s_plus[better] - s_minus[worse] + cross_offset) + u_gap)
    terms["div_plus"] = div_plus[better] + div_plus[worse]
    terms["div_minus"] = div_minus[better] + div_minus[worse]

    breakdown = PairLossBreakdown(**{name: float(terms[name].mean()) for name in TERMS})
    breakdown.total = sum(weights[name] * getattr(breakdown, name) for name in TERMS)

    g = {name: np.zeros(n) for name in ("s_plus", "s_minus", "u", "div_plus", "div_minus")}

    def push(target, idx, values):
        np.add.at(g[target], idx, values / B)

    c = {name: weights[name] * coef[name] for name in coef}
    push("s_plus", better, -c["rank_plus"] - c["disp_plus"] - c["rank_aware"])
    push("s_plus", worse, c["rank_plus"] + c["disp_plus"])
    push("s_minus", better, -c["rank_minus"] - c["disp_minus"])
    push("s_minus", worse, c["rank_minus"] + c["disp_minus"] + c["rank_aware"])
    uc = c["disp_plus"] + c["disp_minus"] + c["rank_aware"]
    push("u", better, -c["rank_uniform"] + uc)
    push("u", worse, c["rank_uniform"] - uc)
    ones = np.ones(B)
    for name in ("div_plus", "div_minus"):
        push(name, better, weights[name] * ones)
        push(name, worse, weights[name] * ones)
    g["cross_offset"] = -float(c["rank_aware"].sum()) / B
    return breakdown.total, breakdown, g
