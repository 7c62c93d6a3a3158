from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional

import numpy as np

from .. import rng as rngmod
from ..accountant import epsilon_for
from ..errors import ConfigurationError, DivergedRunError, InvalidInputError, SeedPolicyError
from .clipping import GradClipPolicy
from .data import Dataset, load_dataset
from .models import Layout, ModelParams, accuracy, init_params, per_example_gradients

DEFAULT_DELTA = 1e-5


@dataclass(frozen=True)
class TrainConfig:
    """Everything that determines a training run apart from its seed.

    ``sigma`` is the noise multiplier: 0 trains with plain SGD, ``None`` means
    a private run whose noise has not been calibrated yet (rejected by ``train``).
    """

    dataset_id: str
    model: str = "logreg"
    learning_rate: float = 0.5
    batch_size: int = 64
    steps: int = 200
    clip: GradClipPolicy = field(default_factory=GradClipPolicy.none)
    sigma: Optional[float] = 0.0
    delta: float = DEFAULT_DELTA
    target_epsilon: Optional[float] = None

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigurationError(f"learning rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch size must be >= 1, got {self.batch_size}")
        if self.steps < 1:
            raise ConfigurationError(f"steps must be >= 1, got {self.steps}")
        if not 0 < self.delta < 1:
            raise ConfigurationError(f"delta must lie in (0, 1), got {self.delta}")
        if self.sigma is not None:
            if self.sigma < 0 or math.isnan(self.sigma):
                raise ConfigurationError(f"sigma must be >= 0, got {self.sigma}")
            if self.sigma > 0 and self.clip.kind == "none":
                raise ConfigurationError("noise without clipping has unbounded sensitivity; set a clipping policy")

    @property
    def private(self) -> bool:
        return self.sigma is None or self.sigma > 0 or self.target_epsilon is not None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["clip"] = self.clip.describe()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["clip"] = GradClipPolicy.parse(d.get("clip", "none"))
        return cls(**d)


@dataclass(frozen=True)
class RunRecord:
    run_id: str
    method_id: str
    dataset_id: str
    model: str
    layout: str
    epsilon: float  # target budget of the cell, math.inf for non-private
    epsilon_spent: float  # accounted budget, math.inf for non-private
    delta: float
    sigma: float
    clip: str
    seed: int
    privacy_valid: bool  # False when the seed was not drawn from entropy
    run_index: int
    steps: int
    epochs: float
    batch_size: int
    learning_rate: float
    skipped_steps: int
    test_accuracy: Optional[float]  # None when the run failed
    train_accuracy: Optional[float]
    wall_time_seconds: float
    status: str = "ok"
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def outcome(self) -> dict:
        """Every field except wall time, for reproducibility comparisons."""
        d = self.to_dict()
        d.pop("wall_time_seconds")
        return d

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("epsilon", "epsilon_spent"):
            if math.isinf(d[key]):
                d[key] = "inf"
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, allow_nan=False)

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        known = {f.name for f in fields(cls)}
        d = {k: v for k, v in d.items() if k in known}
        for key in ("epsilon", "epsilon_spent"):
            d[key] = float(d[key])
        return cls(**d)

    @classmethod
    def from_json(cls, line: str) -> "RunRecord":
        return cls.from_dict(json.loads(line))


def poisson_batch(n_examples: int, batch_size: int, rng: np.random.Generator) -> np.ndarray:
    """Indices of a Poisson sample: each example kept independently with probability L/N."""
    if not 0 < batch_size <= n_examples:
        raise InvalidInputError(f"need 0 < L <= N, got L={batch_size}, N={n_examples}")
    if batch_size == n_examples:
        return np.arange(n_examples)
    q = batch_size / n_examples
    return np.flatnonzero(rng.random(n_examples) < q)


def noisy_gradient(
    params: ModelParams,
    X: np.ndarray,
    y: np.ndarray,
    clip: GradClipPolicy,
    sigma: float,
    batch_size: int,
    rng: Optional[np.random.Generator],
) -> np.ndarray:
    """(sum of clipped per-example gradients + N(0, (sigma*S)^2 I)) / L, S the clip sensitivity."""
    if sigma > 0 and clip.kind == "none":
        raise ConfigurationError("noise without clipping has unbounded sensitivity")
    dim = params.layout.size
    total = clip.apply(per_example_gradients(params, X, y)).sum(axis=0) if len(y) else np.zeros(dim)
    if sigma > 0:
        if rng is None:
            raise ConfigurationError("a private step needs a noise generator")
        total = total + rng.normal(0.0, sigma * clip.sensitivity, size=dim)
    return total / batch_size


def dpsgd_step(
    params: ModelParams,
    X: np.ndarray,
    y: np.ndarray,
    config: TrainConfig,
    rng: Optional[np.random.Generator] = None,
) -> ModelParams:
    """One DP-SGD update on a batch the caller has already sampled."""
    sigma = config.sigma
    if sigma is None:
        raise ConfigurationError("sigma is not set; calibrate it first (see `calibrate`)")
    g = noisy_gradient(params, X, y, config.clip, sigma, config.batch_size, rng)
    return params.replace(params.theta - config.learning_rate * g)


def sgd_step(params: ModelParams, X: np.ndarray, y: np.ndarray, learning_rate: float, batch_size: int) -> ModelParams:
    """Plain mini-batch SGD with the same nominal-L divisor as DP-SGD."""
    g = per_example_gradients(params, X, y).sum(axis=0) / batch_size
    return params.replace(params.theta - learning_rate * g)


def resolve_seed(config: TrainConfig, seed: Optional[int], unsafe_fixed_seed: bool) -> tuple[int, bool]:
    """Return (seed, privacy_valid)."""
    if seed is None:
        return rngmod.fresh_seed(), True
    seed = rngmod.check_seed(seed)
    if config.private and not unsafe_fixed_seed:
        raise SeedPolicyError(
            "a fixed seed voids the privacy guarantee of a private run; "
            "pass unsafe_fixed_seed=True (CLI: --unsafe-fixed-seed) to accept that"
        )
    return seed, not config.private


def fit(config: TrainConfig, data: Dataset, seed: int) -> tuple[ModelParams, int]:
    """Run T steps; returns the final parameters and the number of empty Poisson batches."""
    layout = Layout.from_spec(config.model, data.input_dim, data.num_classes)
    params = init_params(layout, rngmod.stream(seed, rngmod.INIT))
    N = data.n_train
    skipped = 0
    for t in range(config.steps):
        idx = poisson_batch(N, config.batch_size, rngmod.stream(seed, rngmod.SAMPLING, t))
        if len(idx) == 0:
            skipped += 1
            if config.sigma == 0:
                continue
            # a private step on an empty batch still releases noise, otherwise the skip leaks |batch| = 0
        noise_rng = rngmod.stream(seed, rngmod.NOISE, t) if config.sigma > 0 else None
        with np.errstate(over="ignore", invalid="ignore"):
            params = dpsgd_step(params, data.X_train[idx], data.y_train[idx], config, noise_rng)
        if not params.is_finite():
            raise DivergedRunError(t)
    return params, skipped


def train(
    config: TrainConfig,
    seed: Optional[int] = None,
    *,
    dataset: Optional[Dataset] = None,
    unsafe_fixed_seed: bool = False,
    method_id: str = "dpsgd",
    run_id: Optional[str] = None,
    run_index: int = 0,
) -> RunRecord:
    """Train one model and return its record.

    Identical (config, seed) pairs give identical records apart from wall time.
    Raises ``DivergedRunError`` if the parameters become non-finite.
    """
    if config.sigma is None:
        raise ConfigurationError(
            "private run without a noise multiplier; run `calibrate` for the target epsilon "
            "and pass the resulting sigma"
        )
    data = dataset if dataset is not None else load_dataset(config.dataset_id)
    N = data.n_train
    if config.batch_size > N:
        raise ConfigurationError(f"batch size {config.batch_size} exceeds training set size {N}")
    seed, privacy_valid = resolve_seed(config, seed, unsafe_fixed_seed)

    if config.sigma > 0:
        spent, _ = epsilon_for(config.sigma, config.batch_size / N, config.steps, config.delta)
    else:
        spent = math.inf
    target = config.target_epsilon if config.target_epsilon is not None else spent

    start = time.perf_counter()
    params, skipped = fit(config, data, seed)
    elapsed = time.perf_counter() - start

    layout = params.layout
    return RunRecord(
        run_id=run_id or f"{method_id}-{seed:016x}",
        method_id=method_id,
        dataset_id=config.dataset_id,
        model=config.model,
        layout=layout.describe(),
        epsilon=target,
        epsilon_spent=spent,
        delta=config.delta,
        sigma=config.sigma,
        clip=config.clip.describe(),
        seed=seed,
        privacy_valid=privacy_valid,
        run_index=run_index,
        steps=config.steps,
        epochs=config.steps * config.batch_size / N,
        batch_size=config.batch_size,
        learning_rate=config.learning_rate,
        skipped_steps=skipped,
        test_accuracy=accuracy(params, data.X_test, data.y_test),
        train_accuracy=accuracy(params, data.X_train, data.y_train),
        wall_time_seconds=elapsed,
    )


def with_sigma(config: TrainConfig, sigma: float) -> TrainConfig:
    return replace(config, sigma=sigma)
