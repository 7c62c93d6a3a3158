"""Softmax regression and a one-hidden-layer tanh MLP over a flat parameter vector.

Parameter layout (row-major blocks, in order):

    logistic regression:  W (d x k), b (k)
    MLP:                  W1 (d x h), b1 (h), W2 (h x k), b2 (k)
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import InvalidInputError


@dataclass(frozen=True)
class Layout:
    input_dim: int
    num_classes: int
    hidden_dim: Optional[int] = None

    def __post_init__(self):
        if self.input_dim < 1 or self.num_classes < 2:
            raise InvalidInputError(f"bad layout {self}")
        if self.hidden_dim is not None and self.hidden_dim < 1:
            raise InvalidInputError(f"hidden width must be >= 1, got {self.hidden_dim}")

    @classmethod
    def from_spec(cls, spec: str, input_dim: int, num_classes: int) -> "Layout":
        """Resolve a model spec (``logreg`` or ``mlp:<width>``) against data dimensions."""
        spec = spec.strip().lower()
        if spec in ("logreg", "lr", "logistic"):
            return cls(input_dim, num_classes)
        m = re.fullmatch(r"mlp:(\d+)", spec)
        if m:
            return cls(input_dim, num_classes, int(m.group(1)))
        raise InvalidInputError(f"unknown model spec {spec!r}; use 'logreg' or 'mlp:<width>'")

    @property
    def shapes(self) -> list[tuple[int, ...]]:
        d, k, h = self.input_dim, self.num_classes, self.hidden_dim
        if h is None:
            return [(d, k), (k,)]
        return [(d, h), (h,), (h, k), (k,)]

    @property
    def size(self) -> int:
        return sum(math.prod(s) for s in self.shapes)

    def describe(self) -> str:
        dims = [self.input_dim] + ([self.hidden_dim] if self.hidden_dim else []) + [self.num_classes]
        return "-".join(str(v) for v in dims)


@dataclass(frozen=True)
class ModelParams:
    layout: Layout
    theta: np.ndarray

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        if theta.shape != (self.layout.size,):
            raise InvalidInputError(
                f"theta has shape {theta.shape}, layout {self.layout.describe()} needs ({self.layout.size},)"
            )
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    def blocks(self) -> list[np.ndarray]:
        out, start = [], 0
        for shape in self.layout.shapes:
            n = math.prod(shape)
            out.append(self.theta[start:start + n].reshape(shape))
            start += n
        return out

    def replace(self, theta: np.ndarray) -> "ModelParams":
        return ModelParams(self.layout, theta)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.theta)))


def init_params(layout: Layout, rng: np.random.Generator) -> ModelParams:
    """Zeros for logistic regression; U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for MLP weights and biases."""
    if layout.hidden_dim is None:
        return ModelParams(layout, np.zeros(layout.size))
    parts = []
    fan_ins = [layout.input_dim, layout.input_dim, layout.hidden_dim, layout.hidden_dim]
    for shape, fan_in in zip(layout.shapes, fan_ins):
        bound = 1.0 / math.sqrt(fan_in)
        parts.append(rng.uniform(-bound, bound, size=math.prod(shape)))
    return ModelParams(layout, np.concatenate(parts))


def _check_batch(params: ModelParams, X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if X.ndim != 2 or X.shape[1] != params.layout.input_dim:
        raise InvalidInputError(
            f"features of shape {X.shape} do not match input dimension {params.layout.input_dim}"
        )
    if y.shape != (X.shape[0],):
        raise InvalidInputError(f"labels of shape {y.shape} do not match {X.shape[0]} examples")
    if X.shape[0] and (y.min() < 0 or y.max() >= params.layout.num_classes):
        raise InvalidInputError("label out of range for the layout's class count")
    return X, y.astype(np.int64)


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def logits(params: ModelParams, X: np.ndarray) -> np.ndarray:
    blocks = params.blocks()
    if params.layout.hidden_dim is None:
        W, b = blocks
        return X @ W + b
    W1, b1, W2, b2 = blocks
    return np.tanh(X @ W1 + b1) @ W2 + b2


def predict(params: ModelParams, X: np.ndarray) -> np.ndarray:
    return np.argmax(logits(params, np.asarray(X, dtype=float)), axis=1)


def accuracy(params: ModelParams, X: np.ndarray, y: np.ndarray) -> float:
    if len(y) == 0:
        raise InvalidInputError("accuracy of an empty set")
    return float(np.mean(predict(params, X) == np.asarray(y)))


def per_example_losses(params: ModelParams, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Cross-entropy of each example."""
    X, y = _check_batch(params, X, y)
    z = logits(params, X)
    z = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    return log_norm - z[np.arange(len(y)), y]


def per_example_gradients(params: ModelParams, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """One row per example: the gradient of that example's cross-entropy w.r.t. theta."""
    X, y = _check_batch(params, X, y)
    n = X.shape[0]
    if n == 0:
        raise InvalidInputError("empty batch")
    k = params.layout.num_classes
    blocks = params.blocks()
    onehot = np.zeros((n, k))
    onehot[np.arange(n), y] = 1.0

    if params.layout.hidden_dim is None:
        W, b = blocks
        delta = _softmax(X @ W + b) - onehot
        gW = np.einsum("ni,nk->nik", X, delta).reshape(n, -1)
        return np.concatenate([gW, delta], axis=1)

    W1, b1, W2, b2 = blocks
    hidden = np.tanh(X @ W1 + b1)
    delta2 = _softmax(hidden @ W2 + b2) - onehot
    delta1 = (delta2 @ W2.T) * (1.0 - hidden * hidden)
    gW1 = np.einsum("ni,nh->nih", X, delta1).reshape(n, -1)
    gW2 = np.einsum("nh,nk->nhk", hidden, delta2).reshape(n, -1)
    return np.concatenate([gW1, delta1, gW2, delta2], axis=1)
