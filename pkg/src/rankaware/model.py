"""Three-branch Siamese scoring network and its checkpoint format.

One ``RankModel`` scores every video, so both sides of a pair share weights.
Branches: high-skill attention -> g, low-skill attention -> h, uniform mean -> f.

Checkpoint layout (little-endian)::

    magic   4 bytes  b"RSKM"
    version u32      1
    D, H, K, T_default  u32 each
    float64 blocks in PARAM_ORDER, each row-major

"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._io import atomic_write_bytes
from .attention import AttentionModule, diversity_loss_batch
from .losses import batch_pair_losses
from .exceptions import CorruptHeaderError, CorruptPayloadError, MissingFileError, ShapeError
from .numcore import DTYPE, AffineLayer

CHECKPOINT_MAGIC = b"RSKM"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<4sIIIII")

ATTENTION_PARAMS = tuple(f"{m}.{p}" for m in ("high", "low") for p in AttentionModule.param_names)
RANKING_PARAMS = ("g.W", "g.b", "h.W", "h.b", "f.W", "f.b")
PARAM_ORDER = ATTENTION_PARAMS + RANKING_PARAMS


@dataclass(frozen=True)
class BranchScores:
    s_plus: float
    s_minus: float
    u: float


class ForwardPass:
    """Cached activations for a list of videos, grouped by segment count.

    ``raw_*`` are branch scores without the ranking-layer bias; pair losses are
    computed from them so that biases cancel exactly in same-branch gaps.
    """

    def __init__(self, n: int, bias_plus: float = 0.0, bias_minus: float = 0.0, bias_uniform: float = 0.0):
        self.raw_plus = np.zeros(n)
        self.raw_minus = np.zeros(n)
        self.raw_u = np.zeros(n)
        self.bias_plus = bias_plus
        self.bias_minus = bias_minus
        self.bias_uniform = bias_uniform
        self.div_plus = np.zeros(n)
        self.div_minus = np.zeros(n)
        self.groups = []

    @property
    def s_plus(self) -> np.ndarray:
        return self.raw_plus + self.bias_plus

    @property
    def s_minus(self) -> np.ndarray:
        return self.raw_minus + self.bias_minus

    @property
    def u(self) -> np.ndarray:
        return self.raw_u + self.bias_uniform

    def attention(self, module: str) -> list[np.ndarray]:
        """Per-video K x T attention matrices in input order."""
        out = [None] * self.raw_plus.shape[0]
        for grp in self.groups:
            A = grp["A_plus" if module == "high" else "A_minus"]
            for row, i in enumerate(grp["idx"]):
                out[i] = A[row]
        return out


class RankModel:
    def __init__(self, att_high: AttentionModule, att_low: AttentionModule,
                 rank_high: AffineLayer, rank_low: AffineLayer, rank_uniform: AffineLayer,
                 T_default: int = 400):
        D = att_high.in_dim
        if (att_low.in_dim, att_low.K, att_low.hidden) != (D, att_high.K, att_high.hidden):
            raise ShapeError("high and low attention modules must share structure")
        for layer in (rank_high, rank_low, rank_uniform):
            if layer.W.shape != (1, D):
                raise ShapeError(f"ranking layers must map {D} -> 1")
        self.att_high = att_high
        self.att_low = att_low
        self.rank_high = rank_high
        self.rank_low = rank_low
        self.rank_uniform = rank_uniform
        self.T_default = T_default

    @classmethod
    def init(cls, D: int, H: int = 256, K: int = 3, seed=0, T_default: int = 400) -> "RankModel":
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        return cls(
            AttentionModule.init(D, H, K, rng, role="high"),
            AttentionModule.init(D, H, K, rng, role="low"),
            AffineLayer.init(D, 1, rng),
            AffineLayer.init(D, 1, rng),
            AffineLayer.init(D, 1, rng),
            T_default=T_default,
        )

    @property
    def D(self) -> int:
        return self.att_high.in_dim

    @property
    def H(self) -> int:
        return self.att_high.hidden

    @property
    def K(self) -> int:
        return self.att_high.K

    def params(self) -> dict[str, np.ndarray]:
        p = {}
        for tag, module in (("high", self.att_high), ("low", self.att_low)):
            for name, arr in module.params().items():
                p[f"{tag}.{name}"] = arr
        for tag, layer in (("g", self.rank_high), ("h", self.rank_low), ("f", self.rank_uniform)):
            p[f"{tag}.W"] = layer.W
            p[f"{tag}.b"] = layer.b
        return p

    def copy(self) -> "RankModel":
        return RankModel(
            self.att_high.copy(), self.att_low.copy(),
            *(AffineLayer(l.W.copy(), l.b.copy()) for l in (self.rank_high, self.rank_low, self.rank_uniform)),
            T_default=self.T_default,
        )

    # ------------------------------------------------------------------ forward

    def forward(self, videos) -> ForwardPass:
        """Scores, attention and diversity losses for a list of T x D matrices."""
        videos = [np.asarray(v, dtype=DTYPE) for v in videos]
        out = ForwardPass(len(videos), float(self.rank_high.b[0]), float(self.rank_low.b[0]),
                          float(self.rank_uniform.b[0]))
        by_len: dict[int, list[int]] = {}
        for i, v in enumerate(videos):
            if v.ndim != 2 or v.shape[1] != self.D:
                raise ShapeError(f"video {i} has shape {v.shape}, expected (T, {self.D})")
            by_len.setdefault(v.shape[0], []).append(i)
        for idx in by_len.values():
            X = np.stack([videos[i] for i in idx])
            A_plus, cache_plus = self.att_high.forward(X)
            A_minus, cache_minus = self.att_low.forward(X)
            pooled_plus = np.einsum("nt,ntd->nd", A_plus.sum(axis=1), X)
            pooled_minus = np.einsum("nt,ntd->nd", A_minus.sum(axis=1), X)
            mean = X.mean(axis=1)
            out.raw_plus[idx] = pooled_plus @ self.rank_high.W[0]
            out.raw_minus[idx] = pooled_minus @ self.rank_low.W[0]
            out.raw_u[idx] = mean @ self.rank_uniform.W[0]
            div_plus, div_grad_plus = diversity_loss_batch(A_plus)
            div_minus, div_grad_minus = diversity_loss_batch(A_minus)
            out.div_plus[idx] = div_plus
            out.div_minus[idx] = div_minus
            out.groups.append(dict(
                idx=np.asarray(idx), X=X, mean=mean,
                A_plus=A_plus, A_minus=A_minus, cache_plus=cache_plus, cache_minus=cache_minus,
                pooled_plus=pooled_plus, pooled_minus=pooled_minus,
                div_grad_plus=div_grad_plus, div_grad_minus=div_grad_minus,
            ))
        return out

    def backward(self, fwd: ForwardPass, grads: dict, attention: bool = True) -> dict[str, np.ndarray]:
        """Parameter gradients from per-video upstream gradients.

        ``grads`` holds d objective / d {s_plus, s_minus, u, div_plus, div_minus}
        per video, taken w.r.t. the bias-free scores, plus ``cross_offset``: the
        derivative w.r.t. ``g.b - h.b``. With ``attention=False`` the attention
        modules are skipped and their gradients are left at zero.
        """
        out = {name: np.zeros_like(arr) for name, arr in self.params().items()}
        cross = grads.get("cross_offset", 0.0)
        out["g.b"][0] += cross
        out["h.b"][0] -= cross
        for grp in fwd.groups:
            idx = grp["idx"]
            d_sp, d_sm, d_u = grads["s_plus"][idx], grads["s_minus"][idx], grads["u"][idx]
            out["g.W"][0] += d_sp @ grp["pooled_plus"]
            out["h.W"][0] += d_sm @ grp["pooled_minus"]
            out["f.W"][0] += d_u @ grp["mean"]
            if not attention:
                continue
            X = grp["X"]
            for tag, module, d_s, layer in (
                ("plus", self.att_high, d_sp, self.rank_high),
                ("minus", self.att_low, d_sm, self.rank_low),
            ):
                d_alpha = d_s[:, None] * (X @ layer.W[0])
                d_A = d_alpha[:, None, :] + grads[f"div_{tag}"][idx][:, None, None] * grp[f"div_grad_{tag}"]
                prefix = "high" if tag == "plus" else "low"
                for name, g in module.backward(grp[f"cache_{tag}"], d_A).items():
                    out[f"{prefix}.{name}"] += g
        return out

    def pair_objective(self, fwd: ForwardPass, better, worse, cfg, weights: dict, attention: bool = True):
        """Mean weighted pair loss over ``(better, worse)`` index pairs and its gradients.

        Returns ``(objective, breakdown, param_grads)``.
        """
        obj, breakdown, upstream = batch_pair_losses(
            fwd.raw_plus, fwd.raw_minus, fwd.raw_u, fwd.div_plus, fwd.div_minus, better, worse, cfg, weights,
            cross_offset=fwd.bias_plus - fwd.bias_minus,
        )
        return obj, breakdown, self.backward(fwd, upstream, attention=attention)

    # ---------------------------------------------------------------- scoring

    def branch_scores(self, video) -> BranchScores:
        fwd = self.forward([video])
        return BranchScores(float(fwd.s_plus[0]), float(fwd.s_minus[0]), float(fwd.u[0]))

    def uniform_score(self, video) -> float:
        video = np.asarray(video, dtype=DTYPE)
        if video.ndim != 2 or video.shape[1] != self.D:
            raise ShapeError(f"video has shape {video.shape}, expected (T, {self.D})")
        return float(video.mean(axis=0) @ self.rank_uniform.W[0] + self.rank_uniform.b[0])

    def attention_scores(self, videos) -> tuple[np.ndarray, np.ndarray]:
        fwd = self.forward(videos)
        return fwd.s_plus, fwd.s_minus

    def rank_scores(self, videos) -> np.ndarray:
        # the uniform branch never enters the fused rank
        s_plus, s_minus = self.attention_scores(videos)
        return s_plus + s_minus

    def rank_score(self, video) -> float:
        return float(self.rank_scores([video])[0])

    # ------------------------------------------------------------ persistence

    def to_bytes(self) -> bytes:
        header = _HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, self.D, self.H, self.K, self.T_default)
        p = self.params()
        return header + b"".join(np.ascontiguousarray(p[name], dtype="<f8").tobytes() for name in PARAM_ORDER)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "RankModel":
        if len(blob) < _HEADER.size:
            raise CorruptHeaderError("checkpoint shorter than its header")
        magic, version, D, H, K, T_default = _HEADER.unpack_from(blob)
        if magic != CHECKPOINT_MAGIC:
            raise CorruptHeaderError(f"bad checkpoint magic {magic!r}")
        if version != CHECKPOINT_VERSION:
            raise CorruptHeaderError(f"unsupported checkpoint version {version}")
        if min(D, H, K) < 1:
            raise CorruptHeaderError("checkpoint dimensions must be positive")
        shapes = _param_shapes(D, H, K)
        expected = _HEADER.size + 8 * sum(int(np.prod(shapes[n])) for n in PARAM_ORDER)
        if len(blob) != expected:
            raise CorruptPayloadError(f"checkpoint payload has {len(blob)} bytes, expected {expected}")
        arrays, offset = {}, _HEADER.size
        for name in PARAM_ORDER:
            count = int(np.prod(shapes[name]))
            arrays[name] = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).astype(DTYPE).reshape(shapes[name])
            offset += 8 * count
        if not all(np.all(np.isfinite(a)) for a in arrays.values()):
            raise CorruptPayloadError("checkpoint holds non-finite parameters")
        modules = [
            AttentionModule(*(arrays[f"{tag}.{n}"] for n in AttentionModule.param_names), role=tag)
            for tag in ("high", "low")
        ]
        layers = [AffineLayer(arrays[f"{tag}.W"], arrays[f"{tag}.b"]) for tag in ("g", "h", "f")]
        return cls(*modules, *layers, T_default=T_default)


def _param_shapes(D: int, H: int, K: int) -> dict[str, tuple]:
    shapes = {}
    for tag in ("high", "low"):
        shapes.update({f"{tag}.W1": (K, H, D), f"{tag}.b1": (K, H), f"{tag}.W2": (K, H), f"{tag}.b2": (K,)})
    for tag in ("g", "h", "f"):
        shapes.update({f"{tag}.W": (1, D), f"{tag}.b": (1,)})
    return shapes


def save_checkpoint(model: RankModel, path) -> Path:
    atomic_write_bytes(path, model.to_bytes())
    return Path(path)


def load_checkpoint(path) -> RankModel:
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"no checkpoint at {path}")
    return RankModel.from_bytes(path.read_bytes())


def uniform_score(video, model: RankModel) -> float:
    return model.uniform_score(video)


def branch_scores(video, model: RankModel) -> BranchScores:
    return model.branch_scores(video)


def rank_score(video, model: RankModel) -> float:
    return model.rank_score(video)


def pair_loss_function(model: RankModel, video_i, video_j, cfg, weights: dict | None = None):
    """``params -> (loss, grads)`` for one ordered pair, ready for ``grad_check``.

    The closure reads ``model``'s live parameter arrays, so perturbing the
    arrays of ``model.params()`` changes the loss.
    """
    from .losses import term_weights

    w = term_weights(cfg) if weights is None else weights
    videos = [np.asarray(video_i, dtype=DTYPE), np.asarray(video_j, dtype=DTYPE)]

    def fn(params):
        fwd = model.forward(videos)
        obj, _, grads = model.pair_objective(fwd, [0], [1], cfg, w)
        return obj, grads

    return fn
