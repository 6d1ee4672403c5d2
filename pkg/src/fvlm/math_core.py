"""Dense linear-algebra and elementwise kernels plus the SGD optimizer.

Everything operates on float64 numpy arrays: matrices are row-major 2-D
arrays, vectors are 1-D arrays.  These kernels are the complete maths
vocabulary of the higher layers; the recurrent cells and heads are all
compositions of affine maps, sigmoid/tanh, elementwise products and sums.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError, TrainingError


def affine(w: np.ndarray, x: np.ndarray, b: np.ndarray) -> np.ndarray:
    """w @ x + b with explicit shape validation."""
    if w.ndim != 2 or x.ndim != 1 or b.ndim != 1:
        raise ShapeError(f"affine expects matrix/vector/vector, got ndim {w.ndim}/{x.ndim}/{b.ndim}")
    if w.shape[1] != x.shape[0]:
        raise ShapeError(f"affine: matrix is {w.shape[0]}x{w.shape[1]} but input has dim {x.shape[0]}")
    if w.shape[0] != b.shape[0]:
        raise ShapeError(f"affine: matrix is {w.shape[0]}x{w.shape[1]} but bias has dim {b.shape[0]}")
    return w @ x + b


def softmax(x: np.ndarray) -> np.ndarray:
    """Numerically stable softmax (max subtraction, so shifts cancel exactly)."""
    if x.ndim != 1 or x.shape[0] < 1:
        raise ShapeError("softmax expects a non-empty vector")
    z = np.exp(x - np.max(x))
    return z / np.sum(z)


def softmax_columns(x: np.ndarray) -> np.ndarray:
    """Column-wise softmax of a 2-D array of logits (one distribution per column)."""
    z = np.exp(x - np.max(x, axis=0, keepdims=True))
    return z / np.sum(z, axis=0, keepdims=True)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # Split by sign to avoid overflow in exp for large negative inputs.
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def tanh(x: np.ndarray) -> np.ndarray:
    return np.tanh(x)


def _check_same_dim(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: operand dims differ, {a.shape} vs {b.shape}")


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _check_same_dim(a, b, "hadamard")
    return a * b


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _check_same_dim(a, b, "add")
    return a + b


@dataclass
class OptimizerState:
    """Plain SGD with global-norm gradient clipping.

    The learning rate is mutated by the training loop (halved when the
    validation metric stops improving).  clip_norm may be inf (no clipping);
    lr 0 makes the step a no-op, which the invariant tests rely on.
    """

    learning_rate: float
    clip_norm: float = 5.0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be non-negative")
        if self.clip_norm <= 0:
            raise ConfigError("clip_norm must be positive")


def global_grad_norm(grads: dict[str, np.ndarray]) -> float:
    """L2 norm over the concatenation of every gradient block."""
    total = 0.0
    for g in grads.values():
        total += float(np.dot(g.ravel(), g.ravel()))
    return float(np.sqrt(total))


def sgd_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             state: OptimizerState) -> None:
    """One in-place SGD update: clip all grads by global norm, then p -= lr * g.

    Raises TrainingError naming the offending block if any gradient is
    non-finite.
    """
    if set(params) != set(grads):
        raise ShapeError(f"param/grad key mismatch: {sorted(set(params) ^ set(grads))}")
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise ShapeError(f"grad shape for '{name}' is {g.shape}, param is {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in parameter block '{name}'")
    norm = global_grad_norm(grads)
    scale = state.clip_norm / norm if norm > state.clip_norm else 1.0
    lr = state.learning_rate
    for name, p in params.items():
        p -= (lr * scale) * grads[name]


def uniform_init(rng: np.random.Generator, shape, scale: float = 0.08) -> np.ndarray:
    """Weight init: uniform in [-scale, +scale], the conventional small-LSTM range."""
    return rng.uniform(-scale, scale, size=shape)
