from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import ConfigurationError, InvalidInputError


@dataclass(frozen=True)
class GradClipPolicy:
    """How per-example gradients are bounded before aggregation.

    ``kind`` is ``"none"``, ``"basic"`` (rescale to norm at most ``clip_bound``)
    or ``"auto"`` (normalize by ``norm + gamma``).
    """

    kind: str = "none"
    clip_bound: Optional[float] = None
    gamma: Optional[float] = None

    def __post_init__(self):
        if self.kind == "none":
            return
        if self.kind == "basic":
            if self.clip_bound is None or not self.clip_bound > 0:
                raise ConfigurationError(f"basic clipping needs a bound > 0, got {self.clip_bound}")
        elif self.kind == "auto":
            if self.gamma is None or not self.gamma >= 0:
                raise ConfigurationError(f"auto clipping needs gamma >= 0, got {self.gamma}")
        else:
            raise ConfigurationError(f"unknown clipping kind {self.kind!r}")

    @classmethod
    def none(cls) -> "GradClipPolicy":
        return cls("none")

    @classmethod
    def basic(cls, clip_bound: float) -> "GradClipPolicy":
        return cls("basic", clip_bound=float(clip_bound))

    @classmethod
    def auto(cls, gamma: float = 0.01) -> "GradClipPolicy":
        return cls("auto", gamma=float(gamma))

    @classmethod
    def parse(cls, text: str) -> "GradClipPolicy":
        """Parse ``none``, ``basic:1.0`` or ``auto:0.01``."""
        kind, _, value = text.partition(":")
        kind = kind.strip().lower()
        if kind == "none" and not value:
            return cls.none()
        try:
            if kind == "basic":
                return cls.basic(float(value))
            if kind == "auto":
                return cls.auto(float(value) if value else 0.01)
        except ValueError as exc:
            raise ConfigurationError(f"bad clipping value in {text!r}") from exc
        raise ConfigurationError(f"cannot parse clipping policy {text!r}")

    def describe(self) -> str:
        if self.kind == "basic":
            return f"basic:{self.clip_bound:g}"
        if self.kind == "auto":
            return f"auto:{self.gamma:g}"
        return "none"

    @property
    def sensitivity(self) -> Optional[float]:
        """L2 bound on one clipped gradient; None when unbounded."""
        if self.kind == "basic":
            return self.clip_bound
        if self.kind == "auto":
            return 1.0
        return None

    def apply(self, grads: np.ndarray) -> np.ndarray:
        """Clip every row of a (batch, dim) gradient matrix."""
        if self.kind == "none":
            return grads
        norms = np.linalg.norm(grads, axis=1, keepdims=True)
        if self.kind == "basic":
            scale = np.minimum(1.0, self.clip_bound / np.where(norms > 0, norms, 1.0))
            return np.where(norms <= self.clip_bound, grads, grads * scale)
        denom = norms + self.gamma
        if np.any(denom == 0):
            raise InvalidInputError("auto clipping with gamma=0 of a zero gradient")
        return grads / denom


def clip_basic(g: np.ndarray, clip_bound: float) -> np.ndarray:
    """Return ``g * min(1, C / ||g||)``; vectors already within the bound come back unchanged."""
    if not clip_bound > 0:
        raise InvalidInputError(f"clip bound must be > 0, got {clip_bound}")
    g = np.asarray(g, dtype=float)
    norm = float(np.linalg.norm(g))
    if norm <= clip_bound:
        return g.copy()
    out = g * (clip_bound / norm)
    # rounding in the rescale may land a hair above C
    new_norm = float(np.linalg.norm(out))
    if new_norm > clip_bound:
        out = out * (clip_bound / new_norm)
    return out


def clip_auto(g: np.ndarray, gamma: float) -> np.ndarray:
    """Return ``g / (||g|| + gamma)``."""
    if gamma < 0 or math.isnan(gamma):
        raise InvalidInputError(f"gamma must be >= 0, got {gamma}")
    g = np.asarray(g, dtype=float)
    denom = float(np.linalg.norm(g)) + gamma
    if denom == 0.0:
        raise InvalidInputError("auto clipping with gamma=0 of a zero gradient")
    return g / denom
