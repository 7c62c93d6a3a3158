"""Monte Carlo simulation of seed cherry-picking.

Each trial draws a "proposed" and a "baseline" group of accuracies from one
pool of runs of a single method, so any declared superiority is a false
discovery. In cherry-pick mode the proposed group is the top of a larger random
subset; in honest mode both groups are plain uniform draws. Both the
std-overlap rule and the paired t-test are applied to every trial.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from . import rng as rngmod
from .errors import ConfigurationError, InvalidInputError
from .stats import PairedSample, paired_ttest, std_overlap_test

MODES = ("cherrypick", "honest")
PAIRINGS = ("draw", "rank")
ALTERNATIVES = ("greater", "two-sided")


@dataclass(frozen=True)
class SeedHackConfig:
    pool_size: int = 500
    subset_size: int = 10
    top_k: int = 3
    baseline_k: int = 3
    trials: int = 1000
    alpha: float = 0.05
    mode: str = "cherrypick"
    # "draw": baseline kept in draw order; "rank": both groups sorted before pairing
    pairing: str = "draw"
    # "greater": one-sided test for proposed > baseline; "two-sided": p < alpha and a positive mean gap
    alternative: str = "greater"
    disjoint: bool = False  # baseline drawn from runs not already in the proposed draw

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.pairing not in PAIRINGS:
            raise ConfigurationError(f"pairing must be one of {PAIRINGS}, got {self.pairing!r}")
        if self.alternative not in ALTERNATIVES:
            raise ConfigurationError(f"alternative must be one of {ALTERNATIVES}, got {self.alternative!r}")
        if self.trials < 1:
            raise ConfigurationError(f"trials must be >= 1, got {self.trials}")
        if not 0 < self.alpha < 1:
            raise ConfigurationError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.top_k != self.baseline_k:
            raise ConfigurationError("a paired comparison needs top_k == baseline_k")
        if self.top_k < 2:
            raise ConfigurationError("groups need at least 2 runs for a t-test")
        if not self.top_k <= self.subset_size <= self.pool_size:
            raise ConfigurationError(
                f"need top_k <= subset_size <= pool_size, got {self.top_k}, {self.subset_size}, {self.pool_size}"
            )
        taken = self.subset_size if self.mode == "cherrypick" else self.top_k
        if self.disjoint and taken + self.baseline_k > self.pool_size:
            raise ConfigurationError("pool too small for disjoint proposed and baseline draws")

    @property
    def proposed_draw(self) -> int:
        return self.subset_size if self.mode == "cherrypick" else self.top_k


@dataclass(frozen=True)
class SeedHackResult:
    std_test_passes: int
    ttest_passes: int
    trials: int
    mode: str
    alpha: float
    seed: int
    config: SeedHackConfig

    @property
    def std_test_rate(self) -> float:
        return self.std_test_passes / self.trials

    @property
    def ttest_rate(self) -> float:
        return self.ttest_passes / self.trials

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "trials": self.trials,
            "std_test_passes": self.std_test_passes,
            "ttest_passes": self.ttest_passes,
            "alpha": self.alpha,
            "seed": self.seed,
            "config": asdict(self.config),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SeedHackResult":
        return cls(d["std_test_passes"], d["ttest_passes"], d["trials"], d["mode"], d["alpha"],
                   d["seed"], SeedHackConfig(**d["config"]))


def _draw(pool: np.ndarray, config: SeedHackConfig, gen: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    n = len(pool)
    picked = gen.choice(n, size=config.proposed_draw, replace=False)
    if config.mode == "cherrypick":
        proposed = np.sort(pool[picked])[::-1][: config.top_k]
    else:
        proposed = pool[picked]
    if config.disjoint:
        rest = np.setdiff1d(np.arange(n), picked, assume_unique=True)
        baseline = pool[gen.choice(rest, size=config.baseline_k, replace=False)]
    else:
        baseline = pool[gen.choice(n, size=config.baseline_k, replace=False)]
    if config.pairing == "rank":
        proposed = np.sort(proposed)[::-1]
        baseline = np.sort(baseline)[::-1]
    return proposed, baseline


def ttest_declares_superior(a: Sequence[float], b: Sequence[float], alpha: float, alternative: str = "greater") -> bool:
    report = paired_ttest(PairedSample.of(a, b), alpha)
    if not report.mu_d > 0:
        return False
    p = report.p_value / 2 if alternative == "greater" else report.p_value
    return p < alpha


def run_trial(pool: np.ndarray, config: SeedHackConfig, gen: np.random.Generator) -> tuple[bool, bool]:
    """(std rule passes, t-test passes) for one simulated report."""
    proposed, baseline = _draw(pool, config, gen)
    sample = PairedSample.of(proposed.tolist(), baseline.tolist())
    std_pass = std_overlap_test(sample)
    t_pass = ttest_declares_superior(sample.a, sample.b, config.alpha, config.alternative)
    return std_pass, t_pass


def _check_pool(pool: Sequence[float], config: SeedHackConfig) -> np.ndarray:
    arr = np.asarray(pool, dtype=float)
    if arr.ndim != 1:
        raise InvalidInputError("pool must be a flat vector of accuracies")
    if len(arr) != config.pool_size:
        raise InvalidInputError(f"pool has {len(arr)} runs, config expects {config.pool_size}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("pool contains non-finite accuracies")
    return arr


def simulate(pool: Sequence[float], config: SeedHackConfig = SeedHackConfig(), seed: Optional[int] = None) -> SeedHackResult:
    """Count how often each decision rule falsely declares the proposed draw superior.

    Trial ``i`` draws from its own stream, so the result depends only on
    (pool, config, seed) and not on evaluation order.
    """
    arr = _check_pool(pool, config)
    seed = rngmod.fresh_seed() if seed is None else rngmod.check_seed(seed)
    std_passes = t_passes = 0
    for i in range(config.trials):
        s, t = run_trial(arr, config, rngmod.stream(seed, rngmod.TRIALS, i))
        std_passes += s
        t_passes += t
    return SeedHackResult(std_passes, t_passes, config.trials, config.mode, config.alpha, seed, config)


def synthetic_pool(mean: float, std: float, size: int, seed: int = 0) -> np.ndarray:
    """Normal accuracies; pools sharing a seed differ only by location and scale."""
    if size < 1 or std < 0 or not math.isfinite(mean):
        raise InvalidInputError(f"bad synthetic pool parameters mean={mean}, std={std}, size={size}")
    return mean + std * rngmod.stream(seed, rngmod.DATA, 1).standard_normal(size)


def pool_from_records(records: Iterable) -> np.ndarray:
    """Test accuracies of successful runs of a single (method, setting) cell, in record order."""
    records = list(records)
    if not records:
        raise InvalidInputError("no records to build a pool from")
    cells = {(r.method_id, r.dataset_id, r.model, r.epsilon) for r in records}
    if len(cells) > 1:
        raise InvalidInputError(f"records span {len(cells)} cells; a pool must come from one")
    return np.array([r.test_accuracy for r in records if r.ok], dtype=float)


def variance_effect_sweep(
    pools: Mapping[float, Sequence[float]],
    config: SeedHackConfig = SeedHackConfig(),
    seed: Optional[int] = None,
) -> list[tuple[float, SeedHackResult]]:
    """Simulate every pool with a shared seed, ordered by epsilon (infinity last)."""
    if len(pools) < 2:
        raise InvalidInputError("a sweep needs at least two pools")
    seed = rngmod.fresh_seed() if seed is None else rngmod.check_seed(seed)
    out = []
    for eps in sorted(pools, key=float):
        pool = pools[eps]
        out.append((float(eps), simulate(pool, replace(config, pool_size=len(pool)), seed)))
    return out


def to_markdown(results: Sequence[tuple[float, SeedHackResult]]) -> str:
    lines = [
        "| epsilon | mode | trials | std test passes | t-test passes |",
        "|---|---|---|---|---|",
    ]
    for eps, r in results:
        eps_text = "inf" if math.isinf(eps) else f"{eps:g}"
        lines.append(f"| {eps_text} | {r.mode} | {r.trials} | {r.std_test_passes} | {r.ttest_passes} |")
    return "\n".join(lines) + "\n"
