"""Paired comparison of two methods: t-test, Cohen's d and a power rule of thumb.

Raw summaries and the effect size use population deviations (denominator n).
The t-statistic uses the sample deviation of the paired differences
(denominator n - 1), which is what ``scipy.stats.ttest_rel`` computes with
its default arguments.

Example:

    >>> rep = paired_ttest(PairedSample.of([1, 2, 3], [0, 0, 1]), alpha=0.05)
    >>> rep.t_stat, round(rep.p_value, 5), rep.significant
    (5.0, 0.03775, True)
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Optional, Sequence

from .errors import DegenerateSampleError, InfiniteRunsError, InvalidInputError

# Degrees of freedom above which the t distribution is replaced by the normal.
DF_NORMAL_CUTOFF = 1_000_000

_CF_EPS = 1e-16
_CF_TINY = 1e-300
_CF_MAX_ITER = 20_000


@dataclass(frozen=True)
class PairedSample:
    a: tuple
    b: tuple

    def __post_init__(self):
        if len(self.a) != len(self.b):
            raise InvalidInputError(
                f"paired vectors differ in length: {len(self.a)} != {len(self.b)}"
            )
        for v in (*self.a, *self.b):
            if not math.isfinite(v):
                raise InvalidInputError(f"non-finite measurement: {v!r}")

    @classmethod
    def of(cls, a: Sequence[float], b: Sequence[float]) -> "PairedSample":
        return cls(tuple(float(x) for x in a), tuple(float(x) for x in b))

    @property
    def n(self) -> int:
        return len(self.a)

    def swapped(self) -> "PairedSample":
        return PairedSample(self.b, self.a)


@dataclass(frozen=True)
class TestReport:
    """Full verdict of a paired comparison of method ``a`` against ``b``.

    ``cohen_d`` is NaN when both groups have zero spread, and ``required_n``
    is None when the observed effect is zero (no finite run count suffices).
    """

    __test__ = False  # not a pytest class

    n: int
    mu1: float
    mu2: float
    sigma1: float
    sigma2: float
    mu_d: float
    sigma_d: float
    t_stat: float
    p_value: float
    cohen_d: float
    alpha: float
    significant: bool
    required_n: Optional[int]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TestReport":
        return cls(**{k: data[k] for k in cls.__dataclass_fields__})

    def verdict(self) -> str:
        word = "significant" if self.significant else "not significant"
        need = "inf" if self.required_n is None else str(self.required_n)
        return (
            f"{word} at alpha={self.alpha:g} (t={self.t_stat:.4g}, p={self.p_value:.4g}, "
            f"n={self.n}); effect size d={self.cohen_d:.4g}; runs for 80% power: {need}"
        )


def raw_summary(x: Sequence[float]) -> tuple[float, float]:
    """Mean and population standard deviation of ``x``."""
    n = len(x)
    if n == 0:
        raise InvalidInputError("raw_summary of an empty vector")
    mean = math.fsum(x) / n
    var = math.fsum((v - mean) ** 2 for v in x) / n
    return mean, math.sqrt(var)


def _sample_std(x: Sequence[float], mean: float) -> float:
    return math.sqrt(math.fsum((v - mean) ** 2 for v in x) / (len(x) - 1))


def _betacf(a: float, b: float, x: float) -> float:
    # Modified Lentz evaluation of the incomplete beta continued fraction.
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _CF_TINY:
        d = _CF_TINY
    d = 1.0 / d
    h = d
    for m in range(1, _CF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def _stirling_tail(x: float) -> float:
    # lgamma(x) - [(x - 0.5) ln x - x + 0.5 ln(2 pi)], valid for x >= 10
    x2 = x * x
    return (1.0 / 12.0 - (1.0 / 360.0 - (1.0 / 1260.0 - 1.0 / (1680.0 * x2)) / x2) / x2) / x


def _log_beta(a: float, b: float) -> float:
    small, big = min(a, b), max(a, b)
    if big < 10.0:
        return math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)
    # lgamma(big + small) - lgamma(big) without cancelling two huge numbers
    ratio = (
        (big - 0.5) * math.log1p(small / big)
        + small * math.log(big + small) - small
        + _stirling_tail(big + small) - _stirling_tail(big)
    )
    return math.lgamma(small) - ratio


def regularized_incomplete_beta(a: float, b: float, x: float, one_minus_x: Optional[float] = None) -> float:
    """I_x(a, b). Pass ``one_minus_x`` when it is known more accurately than ``1 - x``."""
    y = 1.0 - x if one_minus_x is None else one_minus_x
    if x <= 0.0:
        return 0.0
    if y <= 0.0:
        return 1.0
    log_x = math.log1p(-y) if x > 0.5 else math.log(x)
    log_y = math.log1p(-x) if y > 0.5 else math.log(y)
    log_front = a * log_x + b * log_y - _log_beta(a, b)
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, y) / b


def t_tail_probability(t: float, df: int) -> float:
    """Two-sided tail probability P(|T| >= |t|) for Student's t with ``df`` degrees of freedom."""
    if df < 1:
        raise InvalidInputError(f"degrees of freedom must be >= 1, got {df}")
    if math.isnan(t):
        raise InvalidInputError("t is NaN")
    if math.isinf(t):
        return 0.0
    if t == 0.0:
        return 1.0
    if df > DF_NORMAL_CUTOFF:
        return math.erfc(abs(t) / math.sqrt(2.0))
    t2 = t * t
    denom = df + t2
    p = regularized_incomplete_beta(df / 2.0, 0.5, df / denom, t2 / denom)
    return min(1.0, max(0.0, p))


def cohens_d(s: PairedSample) -> float:
    """Standardized mean difference with the equal-size pooled deviation."""
    if s.n < 1:
        raise InvalidInputError("cohens_d needs at least one pair")
    mu1, sigma1 = raw_summary(s.a)
    mu2, sigma2 = raw_summary(s.b)
    pooled = math.sqrt((sigma1 ** 2 + sigma2 ** 2) / 2.0)
    if pooled == 0.0:
        raise DegenerateSampleError("pooled standard deviation is zero")
    return (mu1 - mu2) / pooled


def required_runs(effect_size: float) -> int:
    """Runs needed for ~80% power at alpha=0.05: ceil(16 / d**2)."""
    if effect_size == 0 or not math.isfinite(effect_size):
        if effect_size == 0:
            raise InfiniteRunsError("zero effect size: no finite number of runs suffices")
        raise InvalidInputError(f"effect size must be finite, got {effect_size}")
    # exact rational ceiling: float 16/d**2 can round across an integer
    d = Fraction(effect_size)
    return max(math.ceil(16 / (d * d)), 1)


def std_overlap_test(s: PairedSample) -> bool:
    """The informal rule: mean_a - std_a > mean_b + std_b (population deviations)."""
    mu1, sigma1 = raw_summary(s.a)
    mu2, sigma2 = raw_summary(s.b)
    return (mu1 - sigma1) > (mu2 + sigma2)


def paired_ttest(s: PairedSample, alpha: float = 0.05) -> TestReport:
    if s.n < 2:
        raise InvalidInputError(f"paired t-test needs n >= 2, got {s.n}")
    if not 0.0 < alpha < 1.0:
        raise InvalidInputError(f"alpha must lie in (0, 1), got {alpha}")
    n = s.n
    mu1, sigma1 = raw_summary(s.a)
    mu2, sigma2 = raw_summary(s.b)
    diffs = [x - y for x, y in zip(s.a, s.b)]
    mu_d = math.fsum(diffs) / n
    sigma_d = _sample_std(diffs, mu_d)

    if sigma_d == 0.0:
        if mu_d == 0.0:
            t_stat, p_value = 0.0, 1.0
        else:
            t_stat, p_value = math.copysign(math.inf, mu_d), 0.0
    else:
        t_stat = mu_d * math.sqrt(n) / sigma_d
        p_value = t_tail_probability(t_stat, n - 1)

    try:
        d = cohens_d(s)
    except DegenerateSampleError:
        d = math.nan
    try:
        need = required_runs(d) if math.isfinite(d) else None
    except InfiniteRunsError:
        need = None

    return TestReport(
        n=n, mu1=mu1, mu2=mu2, sigma1=sigma1, sigma2=sigma2,
        mu_d=mu_d, sigma_d=sigma_d, t_stat=t_stat, p_value=p_value,
        cohen_d=d, alpha=alpha, significant=p_value < alpha, required_n=need,
    )
