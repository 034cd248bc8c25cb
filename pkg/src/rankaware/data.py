"""Feature files, pair annotations, transitive closure and train/test splits.

Feature file (``.rskf``), little-endian::

    b"RSKF" | u32 version=1 | u32 T | u32 D | T*D float64, row-major

A dataset manifest is plain text, one ``id,task,relative/path.rskf`` per line
(``#`` starts a comment). Pair files are UTF-8 CSV with a ``better,worse``
header and an optional third ``origin`` column.
"""

from __future__ import annotations

import csv
import io
import json
import struct
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import networkx as nx
import numpy as np

from .exceptions import (
    CorruptHeaderError,
    CorruptPayloadError,
    CycleError,
    DataError,
    DimensionMismatchError,
    EmptySplitError,
    MissingFileError,
    NonFiniteFeatureError,
    UnknownVideoError,
)
from ._io import atomic_write_bytes

FEATURE_MAGIC = b"RSKF"
FEATURE_VERSION = 1
_FEATURE_HEADER = struct.Struct("<4sIII")

ANNOTATED = "annotated"
CLOSURE = "closure"


@dataclass
class VideoRecord:
    id: str
    task: str
    features: np.ndarray
    source_path: str = ""

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise DimensionMismatchError(f"video {self.id}: features must be T x D with T >= 1")
        if not np.all(np.isfinite(self.features)):
            raise NonFiniteFeatureError(f"video {self.id}: non-finite feature values")

    @property
    def T(self) -> int:
        return self.features.shape[0]

    @property
    def D(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class PairAnnotation:
    better: str
    worse: str
    origin: str = ANNOTATED

    def __post_init__(self):
        if self.better == self.worse:
            raise DataError(f"pair compares video {self.better!r} with itself")
        if self.origin not in (ANNOTATED, CLOSURE):
            raise DataError(f"unknown pair origin {self.origin!r}")

    @property
    def key(self) -> tuple[str, str]:
        return self.better, self.worse


@dataclass
class SplitSpec:
    train_videos: list[str]
    test_videos: list[str]
    train_pairs: list[PairAnnotation]
    test_pairs: list[PairAnnotation]
    seed: int
    dropped_pairs: int = 0
    fold: int | None = None

    def to_json(self) -> str:
        doc = {
            "seed": self.seed,
            "fold": self.fold,
            "dropped_pairs": self.dropped_pairs,
            "train_videos": self.train_videos,
            "test_videos": self.test_videos,
            "train_pairs": [[p.better, p.worse, p.origin] for p in self.train_pairs],
            "test_pairs": [[p.better, p.worse, p.origin] for p in self.test_pairs],
        }
        return json.dumps(doc, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "SplitSpec":
        try:
            doc = json.loads(text)
            return cls(
                train_videos=list(doc["train_videos"]),
                test_videos=list(doc["test_videos"]),
                train_pairs=[PairAnnotation(*p) for p in doc["train_pairs"]],
                test_pairs=[PairAnnotation(*p) for p in doc["test_pairs"]],
                seed=int(doc["seed"]),
                dropped_pairs=int(doc.get("dropped_pairs", 0)),
                fold=doc.get("fold"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed split file: {exc}") from exc


# --------------------------------------------------------------------- features

def encode_features(features: np.ndarray) -> bytes:
    features = np.asarray(features, dtype=np.float64)
    T, D = features.shape
    return _FEATURE_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, T, D) + features.astype("<f8").tobytes()


def write_features(record_or_features, path) -> Path:
    features = getattr(record_or_features, "features", record_or_features)
    atomic_write_bytes(path, encode_features(features))
    return Path(path)


def load_features(path, video_id: str | None = None, task: str = "", expected_dim: int | None = None) -> VideoRecord:
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"feature file not found: {path}")
    blob = path.read_bytes()
    if len(blob) < _FEATURE_HEADER.size:
        raise CorruptHeaderError(f"{path}: file shorter than the feature header")
    magic, version, T, D = _FEATURE_HEADER.unpack_from(blob)
    if magic != FEATURE_MAGIC:
        raise CorruptHeaderError(f"{path}: bad magic {magic!r}")
    if version != FEATURE_VERSION:
        raise CorruptHeaderError(f"{path}: unsupported version {version}")
    if T < 1 or D < 1:
        raise CorruptHeaderError(f"{path}: header declares empty matrix {T}x{D}")
    payload = len(blob) - _FEATURE_HEADER.size
    if payload != 8 * T * D:
        raise CorruptPayloadError(f"{path}: payload has {payload} bytes, header implies {8 * T * D}")
    if expected_dim is not None and D != expected_dim:
        raise DimensionMismatchError(f"{path}: feature dim {D}, expected {expected_dim}")
    features = np.frombuffer(blob, dtype="<f8", offset=_FEATURE_HEADER.size).astype(np.float64).reshape(T, D)
    if not np.all(np.isfinite(features)):
        raise NonFiniteFeatureError(f"{path}: non-finite feature values")
    return VideoRecord(video_id if video_id is not None else path.stem, task, features, str(path))


def read_manifest(path) -> list[tuple[str, str, str]]:
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"manifest not found: {path}")
    rows = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 3 or not all(parts):
            raise DataError(f"{path}:{lineno}: expected 'id,task,path'")
        rows.append(tuple(parts))
    ids = Counter(vid for vid, _, _ in rows)
    dupes = [vid for vid, n in ids.items() if n > 1]
    if dupes:
        raise DataError(f"{path}: duplicate video ids {sorted(dupes)}")
    return rows


def write_manifest(rows, path) -> None:
    text = "".join(f"{vid},{task},{rel}\n" for vid, task, rel in rows)
    atomic_write_bytes(path, text.encode("utf-8"))


def load_dataset(manifest_path, expected_dim: int | None = None) -> dict[str, VideoRecord]:
    """All videos listed in a manifest, keyed by id; paths resolve against its directory."""
    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    videos = {}
    for vid, task, rel in read_manifest(manifest_path):
        videos[vid] = load_features(base / rel, video_id=vid, task=task, expected_dim=expected_dim)
    dims = {v.D for v in videos.values()}
    if len(dims) > 1:
        raise DimensionMismatchError(f"{manifest_path}: mixed feature dims {sorted(dims)}")
    return videos


# ------------------------------------------------------------------------ pairs

def parse_pairs(text: str, source: str = "<pairs>") -> list[PairAnnotation]:
    reader = csv.reader(io.StringIO(text))
    rows = [r for r in reader if r and any(c.strip() for c in r)]
    if not rows or [c.strip() for c in rows[0][:2]] != ["better", "worse"]:
        raise DataError(f"{source}: missing 'better,worse' header")
    pairs = []
    for lineno, row in enumerate(rows[1:], 2):
        row = [c.strip() for c in row]
        if len(row) not in (2, 3) or not row[0] or not row[1]:
            raise DataError(f"{source}:{lineno}: expected 'better,worse[,origin]'")
        pairs.append(PairAnnotation(*row))
    return pairs


def read_pairs(path) -> list[PairAnnotation]:
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"pair file not found: {path}")
    return parse_pairs(path.read_text(encoding="utf-8"), source=str(path))


def format_pairs(pairs, with_origin: bool = False) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["better", "worse", "origin"] if with_origin else ["better", "worse"])
    for p in pairs:
        writer.writerow([p.better, p.worse, p.origin] if with_origin else [p.better, p.worse])
    return buf.getvalue()


def write_pairs(pairs, path, with_origin: bool = False) -> None:
    atomic_write_bytes(path, format_pairs(pairs, with_origin).encode("utf-8"))


def validate_pairs(pairs, video_ids=None) -> list[str]:
    """Human-readable problems: duplicates, contradictions, unknown ids."""
    issues = []
    counts = Counter(p.key for p in pairs)
    for (a, b), n in sorted(counts.items()):
        if n > 1:
            issues.append(f"duplicate pair {a},{b} appears {n} times")
        if a < b and (b, a) in counts:
            issues.append(f"contradictory pairs {a},{b} and {b},{a}")
    if video_ids is not None:
        known = set(video_ids)
        for vid in sorted({v for p in pairs for v in p.key} - known):
            issues.append(f"unknown video id {vid}")
    return issues


def transitive_closure(pairs) -> list[PairAnnotation]:
    """Annotated pairs plus every pair implied by reachability, deduplicated.

    Annotated pairs keep their order and origin; implied pairs follow, sorted.
    Raises ``CycleError`` naming one cycle if the annotations are inconsistent.
    """
    graph = nx.DiGraph()
    out, seen = [], set()
    for p in pairs:
        graph.add_edge(p.better, p.worse)
        if p.key not in seen:
            seen.add(p.key)
            out.append(p)
    try:
        cycle = nx.find_cycle(graph)
    except nx.NetworkXNoCycle:
        cycle = None
    if cycle:
        raise CycleError([u for u, _ in cycle] + [cycle[0][0]])
    implied = []
    for node in graph.nodes:
        for other in nx.descendants(graph, node):
            if (node, other) not in seen:
                implied.append((node, other))
    out.extend(PairAnnotation(a, b, CLOSURE) for a, b in sorted(implied))
    return out


def reversed_pairs(pairs) -> list[PairAnnotation]:
    return [PairAnnotation(p.worse, p.better, p.origin) for p in pairs]


# ----------------------------------------------------------------------- splits

def _assign(pairs, train: set, test: set):
    train_pairs, test_pairs, dropped = [], [], 0
    for p in pairs:
        if p.better in train and p.worse in train:
            train_pairs.append(p)
        elif p.better in test and p.worse in test:
            test_pairs.append(p)
        else:
            dropped += 1
    return train_pairs, test_pairs, dropped


def _pair_video_ids(videos, pairs) -> list[str]:
    ids = list(videos) if videos is not None else []
    if not ids:
        ids = sorted({v for p in pairs for v in p.key})
    else:
        unknown = {v for p in pairs for v in p.key} - set(ids)
        if unknown:
            raise UnknownVideoError(f"pairs reference unknown videos {sorted(unknown)}")
    return sorted(ids)


def make_split(videos, pairs, test_fraction: float = 0.25, seed: int = 0) -> SplitSpec:
    """Seeded video-level split; pairs crossing the split are dropped."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie strictly between 0 and 1")
    ids = _pair_video_ids(videos, pairs)
    order = np.random.default_rng(seed).permutation(len(ids))
    n_test = int(round(test_fraction * len(ids)))
    if n_test == 0 or n_test == len(ids):
        raise EmptySplitError(f"test_fraction {test_fraction} leaves one side of {len(ids)} videos empty")
    test = sorted(ids[i] for i in order[:n_test])
    train = sorted(ids[i] for i in order[n_test:])
    train_pairs, test_pairs, dropped = _assign(pairs, set(train), set(test))
    if not train_pairs or not test_pairs:
        raise EmptySplitError(f"split seed {seed}: {len(train_pairs)} train / {len(test_pairs)} test pairs")
    return SplitSpec(train, test, train_pairs, test_pairs, seed, dropped)


def make_kfold(videos, pairs, k: int = 4, seed: int = 0) -> list[SplitSpec]:
    """k seeded video partitions; fold ``i`` tests on partition ``i``."""
    if k < 2:
        raise ValueError("k-fold needs k >= 2")
    ids = _pair_video_ids(videos, pairs)
    if len(ids) < k:
        raise EmptySplitError(f"{len(ids)} videos cannot fill {k} folds")
    order = np.random.default_rng(seed).permutation(len(ids))
    parts = np.array_split(order, k)
    splits = []
    for i, part in enumerate(parts):
        test = sorted(ids[j] for j in part)
        train = sorted(set(ids) - set(test))
        train_pairs, test_pairs, dropped = _assign(pairs, set(train), set(test))
        if not train_pairs or not test_pairs:
            raise EmptySplitError(f"fold {i}: {len(train_pairs)} train / {len(test_pairs)} test pairs")
        splits.append(SplitSpec(train, test, train_pairs, test_pairs, seed, dropped, fold=i))
    return splits


def augment_noise(features: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Add i.i.d. N(0, sigma^2) noise to every entry. Training-time only."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    features = np.asarray(features, dtype=np.float64)
    if sigma == 0:
        return features.copy()
    return features + rng.normal(0.0, sigma, size=features.shape)
