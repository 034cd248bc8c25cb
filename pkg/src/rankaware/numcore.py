"""Dense numerical kernel: affine layers, activations, Adam and gradient checking.

Everything runs on float64 numpy arrays. Parameters are plain arrays kept in
name -> array dicts so optimizers and checkpoints can walk them in a fixed
order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .exceptions import NumericError, ShapeError

DTYPE = np.float64


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    """Return ``x`` as a finite 2-D float64 array or raise."""
    arr = np.asarray(x, dtype=DTYPE)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} contains non-finite entries")
    return arr


def glorot_uniform(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_out, fan_in))


class AffineLayer:
    """``y = W x + b`` with a cached input for the backward pass.

    ``W`` and ``b`` may be views into larger parameter arrays; gradients are
    accumulated into ``grad_W``/``grad_b`` which mirror their shapes.
    """

    def __init__(self, W: np.ndarray, b: np.ndarray, grad_W=None, grad_b=None):
        if W.ndim != 2 or b.shape != (W.shape[0],):
            raise ShapeError(f"bad affine shapes W{W.shape} b{b.shape}")
        self.W = W
        self.b = b
        self.grad_W = np.zeros_like(W) if grad_W is None else grad_W
        self.grad_b = np.zeros_like(b) if grad_b is None else grad_b
        self._x = None

    @classmethod
    def init(cls, in_dim: int, out_dim: int, rng: np.random.Generator) -> "AffineLayer":
        return cls(glorot_uniform(rng, out_dim, in_dim), np.zeros(out_dim))

    @property
    def in_dim(self) -> int:
        return self.W.shape[1]

    @property
    def out_dim(self) -> int:
        return self.W.shape[0]

    def forward(self, x: np.ndarray) -> np.ndarray:
        # accepts a single vector or a stack (..., in_dim)
        x = np.asarray(x, dtype=DTYPE)
        if x.shape[-1] != self.in_dim:
            raise ShapeError(f"affine input has width {x.shape[-1]}, layer expects {self.in_dim}")
        self._x = x
        return x @ self.W.T + self.b

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._x is None:
            raise RuntimeError("backward called before forward")
        x2 = self._x.reshape(-1, self.in_dim)
        g2 = np.asarray(grad_out, dtype=DTYPE).reshape(-1, self.out_dim)
        self.grad_W += g2.T @ x2
        self.grad_b += g2.sum(axis=0)
        return grad_out @ self.W

    def zero_grad(self) -> None:
        self.grad_W[...] = 0.0
        self.grad_b[...] = 0.0


def affine_forward(x, layer: AffineLayer) -> np.ndarray:
    return layer.forward(x)


def relu(x) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=DTYPE), 0.0)


def relu_backward(grad_out: np.ndarray, pre_activation: np.ndarray) -> np.ndarray:
    return grad_out * (pre_activation > 0)


def softmax_stable(x, axis: int = -1) -> np.ndarray:
    """Softmax with max-subtraction; ``axis`` selects the normalised axis."""
    x = np.asarray(x, dtype=DTYPE)
    if x.size == 0 or x.shape[axis] == 0:
        raise ShapeError("softmax of an empty vector")
    z = np.exp(x - x.max(axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)


def softmax_backward(grad_out: np.ndarray, probs: np.ndarray, axis: int = -1) -> np.ndarray:
    return probs * (grad_out - (grad_out * probs).sum(axis=axis, keepdims=True))


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")


def adam_step(params: dict, grads: dict, state: AdamState) -> None:
    """Bias-corrected Adam update applied in place to every array in ``params``."""
    for name, p in params.items():
        if grads[name].shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {grads[name].shape}, expected {p.shape}")
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def grad_check(
    scalar_fn: Callable[[dict], tuple[float, dict]],
    params: dict,
    eps: float = 1e-6,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``scalar_fn(params)`` must return ``(loss, grads)`` with ``grads`` keyed
    like ``params``. Parameters are perturbed in place and restored.
    """
    if not 1e-6 <= eps <= 1e-3:
        raise ValueError("eps must lie in [1e-6, 1e-3]")
    loss, analytic = scalar_fn(params)
    if not np.isfinite(loss):
        raise NumericError("loss is not finite")
    analytic = {k: np.array(v, dtype=DTYPE, copy=True) for k, v in analytic.items()}
    worst = 0.0
    for name, p in params.items():
        flat = p.reshape(-1)
        an_flat = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up, _ = scalar_fn(params)
            flat[i] = orig - eps
            down, _ = scalar_fn(params)
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericError(f"non-finite loss while perturbing {name}[{i}]")
            fd = (up - down) / (2.0 * eps)
            err = abs(fd - an_flat[i]) / max(1e-8, abs(fd) + abs(an_flat[i]))
            worst = max(worst, err)
    return worst
