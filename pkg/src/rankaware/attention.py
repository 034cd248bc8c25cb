"""K-filter temporal attention over a video's segment features.

Each filter is ``softmax_t(w2 . relu(W1 p_t + b1) + b2)``: a distribution over
the T segments. A module sums its K filters, so the per-segment weights carry
total mass K and are not renormalised.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ShapeError
from .numcore import DTYPE, AffineLayer, glorot_uniform, relu, relu_backward, softmax_backward, softmax_stable


@dataclass
class AttentionFilter:
    layer1: AffineLayer  # D -> H, followed by ReLU
    layer2: AffineLayer  # H -> 1, followed by softmax over segments


def filter_forward(segments: np.ndarray, filt: AttentionFilter) -> np.ndarray:
    """Weights over the T segments of one video for a single filter."""
    segments = np.asarray(segments, dtype=DTYPE)
    if segments.ndim != 2 or segments.shape[0] < 1:
        raise ShapeError(f"segments must be a non-empty T x D matrix, got {segments.shape}")
    hidden = relu(filt.layer1.forward(segments))
    logits = filt.layer2.forward(hidden)[:, 0]
    return softmax_stable(logits)


class AttentionModule:
    """K attention filters with parameters stacked along a leading K axis.

    Stacking lets a whole batch of videos go through all filters with a few
    einsum calls; ``filters`` exposes per-filter ``AffineLayer`` views onto the
    same storage.
    """

    param_names = ("W1", "b1", "W2", "b2")

    def __init__(self, W1, b1, W2, b2, role: str = "high"):
        W1, b1, W2, b2 = (np.ascontiguousarray(a, dtype=DTYPE) for a in (W1, b1, W2, b2))
        K, H, D = W1.shape
        if b1.shape != (K, H) or W2.shape != (K, H) or b2.shape != (K,):
            raise ShapeError("inconsistent attention parameter shapes")
        if K < 1:
            raise ShapeError("an attention module needs at least one filter")
        self.W1, self.b1, self.W2, self.b2 = W1, b1, W2, b2
        self.role = role

    @classmethod
    def init(cls, D: int, H: int, K: int, rng: np.random.Generator, role: str = "high") -> "AttentionModule":
        W1 = np.stack([glorot_uniform(rng, H, D) for _ in range(K)])
        W2 = np.stack([glorot_uniform(rng, 1, H)[0] for _ in range(K)])
        return cls(W1, np.zeros((K, H)), W2, np.zeros(K), role=role)

    @property
    def K(self) -> int:
        return self.W1.shape[0]

    @property
    def hidden(self) -> int:
        return self.W1.shape[1]

    @property
    def in_dim(self) -> int:
        return self.W1.shape[2]

    @property
    def filters(self) -> list[AttentionFilter]:
        return [
            AttentionFilter(
                AffineLayer(self.W1[k], self.b1[k]),
                AffineLayer(self.W2[k][None, :], self.b2[k : k + 1]),
            )
            for k in range(self.K)
        ]

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.param_names}

    def forward(self, X: np.ndarray):
        """Attention matrices for a stack of videos ``X`` of shape (N, T, D).

        Returns ``(A, cache)`` with ``A`` of shape (N, K, T).
        """
        if X.ndim != 3 or X.shape[2] != self.in_dim:
            raise ShapeError(f"expected (N, T, {self.in_dim}) segments, got {X.shape}")
        if X.shape[1] < 1:
            raise ShapeError("videos need at least one segment")
        pre = np.einsum("ntd,khd->nkth", X, self.W1, optimize=True) + self.b1[None, :, None, :]
        hidden = relu(pre)
        # b2 shifts every logit of a filter equally, so it cancels in the softmax
        # over segments; leaving it out keeps its gradient exactly zero
        logits = np.einsum("nkth,kh->nkt", hidden, self.W2, optimize=True)
        A = softmax_stable(logits, axis=2)
        return A, (X, pre, hidden, A)

    def backward(self, cache, grad_A: np.ndarray) -> dict[str, np.ndarray]:
        X, pre, hidden, A = cache
        grad_logits = softmax_backward(grad_A, A, axis=2)
        grads = {
            "b2": np.zeros_like(self.b2),
            "W2": np.einsum("nkt,nkth->kh", grad_logits, hidden, optimize=True),
        }
        grad_hidden = grad_logits[..., None] * self.W2[None, :, None, :]
        grad_pre = relu_backward(grad_hidden, pre)
        grads["b1"] = grad_pre.sum(axis=(0, 2))
        grads["W1"] = np.einsum("nkth,ntd->khd", grad_pre, X, optimize=True)
        return grads

    def attention_matrix(self, segments: np.ndarray) -> np.ndarray:
        segments = np.asarray(segments, dtype=DTYPE)
        if segments.ndim != 2:
            raise ShapeError(f"segments must be T x D, got {segments.shape}")
        A, _ = self.forward(segments[None])
        return A[0]

    def copy(self) -> "AttentionModule":
        return AttentionModule(self.W1.copy(), self.b1.copy(), self.W2.copy(), self.b2.copy(), self.role)


def module_attention(segments: np.ndarray, module: AttentionModule) -> tuple[np.ndarray, np.ndarray]:
    """Per-segment weights (summed over filters) and the K x T attention matrix."""
    A = module.attention_matrix(segments)
    return A.sum(axis=0), A


def attention_pool(segments: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    segments = np.asarray(segments, dtype=DTYPE)
    alpha = np.asarray(alpha, dtype=DTYPE)
    if alpha.shape != (segments.shape[0],):
        raise ShapeError(f"{alpha.shape[0] if alpha.ndim else 0} weights for {segments.shape[0]} segments")
    return alpha @ segments


def diversity_loss(A: np.ndarray) -> float:
    """Squared Frobenius distance between the filter Gram matrix ``A A^T`` and I."""
    A = np.asarray(A, dtype=DTYPE)
    G = A @ A.T - np.eye(A.shape[0])
    return float(np.sum(G * G))


def diversity_loss_batch(A: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Diversity loss per video and its gradient for a (N, K, T) stack."""
    G = np.einsum("nkt,nlt->nkl", A, A) - np.eye(A.shape[1])[None]
    loss = np.sum(G * G, axis=(1, 2))
    grad = 4.0 * np.einsum("nkl,nlt->nkt", G, A)
    return loss, grad
