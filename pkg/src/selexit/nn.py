"""Dense layers, softmax and an Adam optimizer on float64 numpy arrays.

Everything here is deliberately small: a handful of fully connected layers
with hand-written backward passes is all the multi-exit model needs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("relu", "tanh", "identity")


class ShapeError(ValueError):
    """Input or parameter dimensions do not line up."""


class TrainingError(RuntimeError):
    """Training produced a non-finite loss or gradient."""


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


@dataclass
class DenseLayer:
    """``activation(W @ x + b)`` with ``W`` of shape (out, in)."""

    weights: np.ndarray
    bias: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ShapeError(f"weights must be 2-D, got shape {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"bias length {self.bias.shape} does not match output width {self.weights.shape[0]}"
            )
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @classmethod
    def init(cls, rng, fan_in, fan_out, activation="identity", zero=False):
        if zero:
            w = np.zeros((fan_out, fan_in))
        else:
            w = glorot_uniform(rng, fan_in, fan_out)
        return cls(w, np.zeros(fan_out), activation)

    @property
    def in_width(self) -> int:
        return self.weights.shape[1]

    @property
    def out_width(self) -> int:
        return self.weights.shape[0]

    def params(self) -> list[np.ndarray]:
        return [self.weights, self.bias]


def activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(z, 0.0)
    if activation == "tanh":
        return np.tanh(z)
    return z


def activate_grad(z: np.ndarray, out: np.ndarray, activation: str) -> np.ndarray:
    """Derivative of the activation, given pre-activation ``z`` and output ``out``."""
    if activation == "relu":
        return (z > 0.0).astype(np.float64)
    if activation == "tanh":
        return 1.0 - out * out
    return np.ones_like(z)


def linear(layer: DenseLayer, x: np.ndarray) -> np.ndarray:
    """Pre-activation for a vector (in,) or a batch (m, in)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != layer.in_width:
        raise ShapeError(f"input width {x.shape[-1]} != layer input width {layer.in_width}")
    return x @ layer.weights.T + layer.bias


def forward_dense(layer: DenseLayer, x: np.ndarray) -> np.ndarray:
    """Apply one dense layer to a vector or a row-batch."""
    return activate(linear(layer, x), layer.activation)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, stabilised by subtracting the row maximum."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.size == 0 or logits.shape[-1] == 0:
        raise ValueError("softmax of an empty vector")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class Adam:
    """Adam with bias-corrected moments; one slot per parameter array."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")

    def step(self, params: list[np.ndarray], grads: list[np.ndarray], names=None):
        """Update ``params`` in place."""
        if len(params) != len(grads):
            raise ShapeError("params and grads differ in length")
        for i, g in enumerate(grads):
            if not np.all(np.isfinite(g)):
                label = names[i] if names else f"parameter {i}"
                raise TrainingError(f"non-finite gradient in {label}")
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if m.shape != p.shape:
                raise ShapeError("moment shape does not mirror parameter shape")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
