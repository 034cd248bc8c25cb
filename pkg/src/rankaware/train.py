"""Alternating two-phase optimisation with checkpointing and epoch logs.

Ranking phase: attention frozen, ``f, g, h`` follow the three margin ranking
losses. Attention phase: ranking layers frozen, both attention modules follow
``lam * diversity + disparity + rank-aware``. Each phase keeps its own Adam
state for the whole run.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from ._io import atomic_write_text
from .exceptions import DataError, NumericError, UnknownVideoError
from .losses import RANKING_TERMS, TERMS, LossConfig, PairLossBreakdown, term_weights
from .model import ATTENTION_PARAMS, RANKING_PARAMS, RankModel, save_checkpoint
from .numcore import AdamState, adam_step

logger = logging.getLogger(__name__)

RANKING, ATTENTION = "ranking", "attention"


@dataclass
class TrainConfig:
    loss: LossConfig = field(default_factory=LossConfig)
    lr: float = 1e-4
    batch_size: int = 128
    epochs: int = 2000
    K: int = 3
    hidden: int = 256
    noise_sigma: float = 0.01
    seed: int = 0
    alternation_period: int = 1
    alternation_unit: str = "epoch"
    use_disp: bool = True
    use_rank_aware: bool = True
    use_diversity: bool = True
    # "auto": attention also learns from the attention-branch ranking losses
    # when neither disparity nor rank-aware loss is enabled
    attention_rank_loss: str = "auto"
    checkpoint_every: int = 0
    T_default: int = 400

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.K < 1 or self.hidden < 1:
            raise ValueError("K and hidden must be >= 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if self.alternation_period < 1:
            raise ValueError("alternation_period must be >= 1")
        if self.alternation_unit not in ("epoch", "batch"):
            raise ValueError("alternation_unit must be 'epoch' or 'batch'")
        if self.attention_rank_loss not in ("auto", "on", "off"):
            raise ValueError("attention_rank_loss must be auto, on or off")

    @property
    def weights(self) -> dict:
        return term_weights(self.loss, self.use_disp, self.use_rank_aware, self.use_diversity)

    @property
    def attention_uses_rank(self) -> bool:
        if self.attention_rank_loss == "auto":
            return not (self.use_disp or self.use_rank_aware)
        return self.attention_rank_loss == "on"

    def phase_weights(self, phase: str) -> dict:
        full = self.weights
        if phase == RANKING:
            return {k: (full[k] if k in RANKING_TERMS else 0.0) for k in TERMS}
        w = {k: (0.0 if k in RANKING_TERMS else full[k]) for k in TERMS}
        if self.attention_uses_rank:
            w["rank_plus"] = w["rank_minus"] = 1.0
        return w

    def phase_of(self, step: int) -> str:
        return RANKING if (step // self.alternation_period) % 2 == 0 else ATTENTION

    # flat key = value form, keys named after the fields ("m", "m2", ... for the loss)

    def to_flat(self) -> dict:
        flat = asdict(self.loss)
        flat.update({f.name: getattr(self, f.name) for f in fields(self) if f.name != "loss"})
        return flat

    @classmethod
    def from_flat(cls, flat: dict) -> "TrainConfig":
        loss_keys = {f.name for f in fields(LossConfig)}
        own = {f.name: f for f in fields(cls) if f.name != "loss"}
        unknown = set(flat) - loss_keys - set(own)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        loss = LossConfig(**{k: float(v) for k, v in flat.items() if k in loss_keys})
        kwargs = {}
        defaults = cls()
        for k, v in flat.items():
            if k in own:
                kwargs[k] = _coerce(v, type(getattr(defaults, k)), k)
        return cls(loss=loss, **kwargs)

    def dumps(self) -> str:
        return "".join(f"{k} = {_fmt(v)}\n" for k, v in self.to_flat().items())

    @classmethod
    def loads(cls, text: str) -> "TrainConfig":
        return cls.from_flat(parse_flat(text))


def parse_flat(text: str) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _coerce(v, typ, key):
    if isinstance(v, typ) and not (typ is int and isinstance(v, bool)):
        return v
    s = str(v).strip()
    try:
        if typ is bool:
            if s.lower() in ("1", "true", "yes", "on"):
                return True
            if s.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(s)
        if typ is int:
            return int(s)
        if typ is float:
            return float(s)
    except ValueError:
        raise ValueError(f"config key {key}: cannot parse {s!r} as {typ.__name__}") from None
    return s


@dataclass
class EpochRecord:
    epoch: int
    phase: str
    losses: PairLossBreakdown
    train_accuracy: float

    def to_json(self) -> str:
        return json.dumps({"epoch": self.epoch, "phase": self.phase, "train_accuracy": self.train_accuracy,
                           **self.losses.as_dict()})


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    checkpoints: list[str] = field(default_factory=list)

    def totals(self) -> np.ndarray:
        return np.array([r.losses.total for r in self.records])


def _index_pairs(videos, pairs):
    """Map pair ids onto a dense index over the videos that appear in pairs."""
    if isinstance(videos, dict):
        lookup = videos
    else:
        lookup = {getattr(v, "id"): v for v in videos}
    ids = sorted({v for p in pairs for v in (p.better, p.worse)})
    missing = [i for i in ids if i not in lookup]
    if missing:
        raise UnknownVideoError(f"pairs reference unknown videos {missing}")
    feats = [np.asarray(getattr(lookup[i], "features", lookup[i]), dtype=np.float64) for i in ids]
    pos = {vid: k for k, vid in enumerate(ids)}
    better = np.array([pos[p.better] for p in pairs], dtype=np.int64)
    worse = np.array([pos[p.worse] for p in pairs], dtype=np.int64)
    return ids, feats, better, worse


def _mean_breakdown(parts, sizes) -> PairLossBreakdown:
    sizes = np.asarray(sizes, dtype=float)
    return PairLossBreakdown(**{
        name: float(np.dot([getattr(p, name) for p in parts], sizes) / sizes.sum())
        for name in PairLossBreakdown.field_names()
    })


def _accuracy(model, feats, better, worse) -> float:
    R = model.rank_scores(feats)
    return float(np.mean(R[better] > R[worse]))


class Trainer:
    """Holds the model and both optimiser states; ``train`` drives it."""

    def __init__(self, model: RankModel, cfg: TrainConfig):
        self.model = model
        self.cfg = cfg
        self.states = {RANKING: AdamState(lr=cfg.lr), ATTENTION: AdamState(lr=cfg.lr)}
        self.groups = {RANKING: RANKING_PARAMS, ATTENTION: ATTENTION_PARAMS}

    def step(self, phase: str, feats, better, worse, check_invariants: bool = False) -> PairLossBreakdown:
        """One optimiser step of ``phase`` on a batch; returns the full logged breakdown."""
        if len(better) == 0:
            raise DataError("empty batch")
        model, cfg = self.model, self.cfg
        with np.errstate(invalid="ignore", over="ignore"):
            fwd = model.forward(feats)
        if not all(np.all(np.isfinite(s)) for s in (fwd.s_plus, fwd.s_minus, fwd.u)):
            raise NumericError(f"non-finite branch scores in {phase} step")
        obj, breakdown, grads = model.pair_objective(
            fwd, better, worse, cfg.loss, cfg.phase_weights(phase), attention=(phase == ATTENTION)
        )
        if not np.isfinite(obj) or not all(np.all(np.isfinite(g)) for g in grads.values()):
            raise NumericError(f"non-finite {phase} objective {obj!r}; breakdown {breakdown.as_dict()}")
        params = model.params()
        names = self.groups[phase]
        frozen = {k: v.copy() for k, v in params.items() if k not in names} if check_invariants else None
        adam_step({k: params[k] for k in names}, {k: grads[k] for k in names}, self.states[phase])
        if check_invariants:
            for k, before in frozen.items():
                assert np.array_equal(before, params[k]), f"{phase} step modified frozen parameter {k}"
            for A in model.forward(feats).attention("high") + model.forward(feats).attention("low"):
                assert np.allclose(A.sum(axis=1), 1.0, atol=1e-9), "attention rows lost stochasticity"
        full = cfg.weights
        logged = PairLossBreakdown(**{k: (getattr(breakdown, k) if full[k] else 0.0) for k in TERMS})
        logged.total = sum(full[k] * getattr(breakdown, k) for k in TERMS)
        return logged


def train(videos, pairs, cfg: TrainConfig, out_dir=None, log_path=None, check_invariants: bool = False,
          model: RankModel | None = None):
    """Fit a ``RankModel`` on ordered ``pairs`` (better first).

    ``videos`` maps ids to feature matrices (or ``VideoRecord``s). Returns
    ``(model, history)``. Noise augmentation is drawn fresh for every video
    each time a batch touches it. Writes ``checkpoints/`` under ``out_dir``
    when given, and one JSON record per epoch to ``log_path``.
    """
    pairs = list(pairs)
    if not pairs:
        raise DataError("training needs at least one pair")
    ids, feats, better, worse = _index_pairs(videos, pairs)
    D = feats[0].shape[1]
    model = model or RankModel.init(D, cfg.hidden, cfg.K, seed=cfg.seed, T_default=cfg.T_default)
    trainer = Trainer(model, cfg)
    order_rng = np.random.default_rng([cfg.seed, 1])
    noise_rng = np.random.default_rng([cfg.seed, 2])
    history = TrainHistory()
    log_fh = None
    if log_path is not None:
        Path(log_path).parent.mkdir(parents=True, exist_ok=True)
        log_fh = open(log_path, "w", encoding="utf-8")
    n = len(pairs)
    batch_counter = 0
    try:
        for epoch in range(cfg.epochs):
            perm = order_rng.permutation(n)
            parts, sizes, phases = [], [], []
            for start in range(0, n, cfg.batch_size):
                sel = perm[start : start + cfg.batch_size]
                phase = cfg.phase_of(epoch if cfg.alternation_unit == "epoch" else batch_counter)
                batch_counter += 1
                used, local = np.unique(np.concatenate([better[sel], worse[sel]]), return_inverse=True)
                batch_feats = [feats[i] + noise_rng.normal(0.0, cfg.noise_sigma, size=feats[i].shape)
                               if cfg.noise_sigma > 0 else feats[i] for i in used]
                b_local, w_local = local[: sel.size], local[sel.size :]
                parts.append(trainer.step(phase, batch_feats, b_local, w_local, check_invariants))
                sizes.append(sel.size)
                phases.append(phase)
            record = EpochRecord(
                epoch=epoch + 1,
                phase=phases[0] if len(set(phases)) == 1 else "mixed",
                losses=_mean_breakdown(parts, sizes),
                train_accuracy=_accuracy(model, feats, better, worse),
            )
            history.records.append(record)
            if log_fh:
                log_fh.write(record.to_json() + "\n")
            if out_dir is not None and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
                path = save_checkpoint(model, Path(out_dir) / "checkpoints" / f"epoch_{epoch + 1:05d}.rskm")
                history.checkpoints.append(str(path))
            logger.debug("epoch %d %s total=%.5f acc=%.4f", epoch + 1, record.phase,
                         record.losses.total, record.train_accuracy)
    finally:
        if log_fh:
            log_fh.close()
    if out_dir is not None:
        path = save_checkpoint(model, Path(out_dir) / "checkpoints" / "last.rskm")
        history.checkpoints.append(str(path))
        atomic_write_text(Path(out_dir) / "resolved.cfg", cfg.dumps())
    return model, history


def ranking_phase_step(trainer: Trainer, feats, better, worse) -> PairLossBreakdown:
    return trainer.step(RANKING, feats, better, worse)


def attention_phase_step(trainer: Trainer, feats, better, worse) -> PairLossBreakdown:
    return trainer.step(ATTENTION, feats, better, worse)
