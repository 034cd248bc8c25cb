"""Planted-signal benchmark: videos whose skill lives in a few labelled segments.

Each video has a latent skill ``z ~ U(0, 1)``. Segments are background by
default; "pro" segments appear more often as ``z`` grows and "con" segments as
it shrinks. With probability ``reversal_rate`` a video also receives one
segment of the opposite kind (a con segment in a high-skill video, a pro
segment in a low-skill one). Features are the label's prototype plus Gaussian
noise, and the ground-truth score is ``(#pro - #con) / T`` plus a tiny ``z``
tiebreak.

Background comes from a large prototype pool, but each video only draws from
``bg_per_video`` of them (its "environment"). The per-video background thus
dominates a mean-pooled descriptor while carrying no skill information.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ._io import atomic_write_text
from .data import PairAnnotation, VideoRecord, write_features, write_manifest, write_pairs
from .exceptions import DataError

BG, PRO, CON = 0, 1, 2
LABEL_CHARS = "bpc"
MIN_GAP = 0.05
TIEBREAK = 1e-3


@dataclass(frozen=True)
class SynthSpec:
    n_videos: int = 60
    T: int = 40
    D: int = 32
    n_pro_prototypes: int = 2
    n_con_prototypes: int = 2
    n_bg_prototypes: int = 64
    bg_per_video: int = 2
    bg_scale: float = 1.0
    pro_rate: float = 4.0
    con_rate: float = 4.0
    noise_std: float = 0.5
    reversal_rate: float = 0.15
    seed: int = 0

    def __post_init__(self):
        counts = (self.n_videos, self.T, self.D, self.n_pro_prototypes, self.n_con_prototypes,
                  self.n_bg_prototypes, self.bg_per_video)
        if min(counts) < 1:
            raise ValueError("all counts must be >= 1")
        if self.bg_per_video > self.n_bg_prototypes:
            raise ValueError("bg_per_video cannot exceed n_bg_prototypes")
        if min(self.pro_rate, self.con_rate, self.noise_std, self.bg_scale) < 0:
            raise ValueError("rates and noise_std must be non-negative")
        if not 0.0 <= self.reversal_rate <= 1.0:
            raise ValueError("reversal_rate must lie in [0, 1]")

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class SynthDataset:
    spec: SynthSpec
    videos: list[VideoRecord]
    truth_scores: np.ndarray
    planted_mask: list[np.ndarray]
    pairs: list[PairAnnotation]
    prototypes: dict = field(default_factory=dict)

    @property
    def features(self) -> dict[str, np.ndarray]:
        return {v.id: v.features for v in self.videos}

    def base_rates(self) -> dict[str, float]:
        """Mean per-video fraction of segments carrying each label."""
        return {
            name: float(np.mean([np.mean(mask == code) for mask in self.planted_mask]))
            for name, code in (("bg", BG), ("pro", PRO), ("con", CON))
        }


def _label_segments(rng, spec: SynthSpec, z: float) -> np.ndarray:
    p_pro = min(1.0, 2.0 * z * spec.pro_rate / spec.T)
    p_con = min(1.0 - p_pro, 2.0 * (1.0 - z) * spec.con_rate / spec.T)
    draw = rng.random(spec.T)
    labels = np.full(spec.T, BG, dtype=np.int8)
    labels[draw < p_pro + p_con] = CON
    labels[draw < p_pro] = PRO
    if rng.random() < spec.reversal_rate:
        bg = np.flatnonzero(labels == BG)
        if bg.size:
            labels[rng.choice(bg)] = CON if z > 0.5 else PRO
    return labels


def qualifying_pairs(ids, scores, min_gap: float = MIN_GAP) -> list[PairAnnotation]:
    scores = np.asarray(scores)
    gap = scores[:, None] - scores[None, :]
    better, worse = np.nonzero(gap >= min_gap)
    return [PairAnnotation(ids[i], ids[j]) for i, j in zip(better, worse)]


def generate(spec: SynthSpec) -> SynthDataset:
    rng = np.random.default_rng(spec.seed)
    prototypes = {
        BG: spec.bg_scale * rng.normal(size=(spec.n_bg_prototypes, spec.D)),
        PRO: rng.normal(size=(spec.n_pro_prototypes, spec.D)),
        CON: rng.normal(size=(spec.n_con_prototypes, spec.D)),
    }
    videos, masks, scores = [], [], []
    for i in range(spec.n_videos):
        z = rng.random()
        labels = _label_segments(rng, spec, z)
        feats = np.empty((spec.T, spec.D))
        env = rng.choice(spec.n_bg_prototypes, size=spec.bg_per_video, replace=False)
        for code, protos in prototypes.items():
            rows = np.flatnonzero(labels == code)
            pool = env if code == BG else np.arange(len(protos))
            feats[rows] = protos[pool[rng.integers(len(pool), size=rows.size)]]
        feats += rng.normal(0.0, spec.noise_std, size=feats.shape) if spec.noise_std > 0 else 0.0
        vid = f"v{i:03d}"
        videos.append(VideoRecord(vid, "synth", feats))
        masks.append(labels)
        scores.append((np.sum(labels == PRO) - np.sum(labels == CON)) / spec.T + TIEBREAK * z)
    scores = np.asarray(scores)
    pairs = qualifying_pairs([v.id for v in videos], scores)
    if not pairs:
        raise DataError("degenerate synthetic spec: no pair of videos differs by the minimum score gap")
    return SynthDataset(spec, videos, scores, masks, pairs, prototypes)


def write_dataset(ds: SynthDataset, out_dir) -> dict[str, Path]:
    """Features, manifest, pairs and truth sidecar under ``out_dir``."""
    out = Path(out_dir)
    rows = []
    for v in ds.videos:
        rel = f"features/{v.id}.rskf"
        write_features(v, out / rel)
        rows.append((v.id, v.task, rel))
    write_manifest(rows, out / "manifest.txt")
    write_pairs(ds.pairs, out / "pairs.csv")
    truth = ["id,truth_score,labels"]
    truth += [
        f"{v.id},{score!r},{''.join(LABEL_CHARS[c] for c in mask)}"
        for v, score, mask in zip(ds.videos, ds.truth_scores.tolist(), ds.planted_mask)
    ]
    atomic_write_text(out / "truth.csv", "\n".join(truth) + "\n")
    return {"manifest": out / "manifest.txt", "pairs": out / "pairs.csv", "truth": out / "truth.csv"}


def read_truth(path) -> dict[str, tuple[float, np.ndarray]]:
    out = {}
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    for line in lines[1:]:
        vid, score, labels = line.split(",")
        out[vid] = (float(score), np.array([LABEL_CHARS.index(ch) for ch in labels], dtype=np.int8))
    return out


def nearest_prototype_scores(ds: SynthDataset) -> np.ndarray:
    """Oracle scorer: classify each segment by its nearest prototype, count pro minus con."""
    labels = np.concatenate([np.full(len(p), code) for code, p in ds.prototypes.items()])
    protos = np.concatenate(list(ds.prototypes.values()))
    scores = []
    for v in ds.videos:
        d2 = ((v.features[:, None, :] - protos[None]) ** 2).sum(axis=2)
        seg = labels[np.argmin(d2, axis=1)]
        scores.append((np.sum(seg == PRO) - np.sum(seg == CON)) / v.T)
    return np.asarray(scores)


@dataclass
class AlignmentReport:
    pro_mass_high: float
    con_mass_low: float
    pro_mass_low: float
    con_mass_high: float
    pro_base_rate: float
    con_base_rate: float


def attention_alignment(model, dataset: SynthDataset) -> AlignmentReport:
    """Average share of each module's attention (normalised by K) on pro and con segments."""
    fwd = model.forward([v.features for v in dataset.videos])
    mass = {}
    for module in ("high", "low"):
        per_label = {PRO: [], CON: []}
        for A, mask in zip(fwd.attention(module), dataset.planted_mask):
            alpha = A.sum(axis=0) / A.shape[0]
            for code in per_label:
                per_label[code].append(alpha[mask == code].sum())
        mass[module] = {code: float(np.mean(v)) for code, v in per_label.items()}
    rates = dataset.base_rates()
    return AlignmentReport(
        pro_mass_high=mass["high"][PRO],
        con_mass_low=mass["low"][CON],
        pro_mass_low=mass["low"][PRO],
        con_mass_high=mass["high"][CON],
        pro_base_rate=rates["pro"],
        con_base_rate=rates["con"],
    )
