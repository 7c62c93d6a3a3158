"""RDP accounting for the Poisson-subsampled Gaussian mechanism.

Per-step RDP at integer order ``a`` uses the binomial expansion

    A_a = sum_k C(a, k) (1 - q)^(a - k) q^k exp((k^2 - k) / (2 sigma^2)),
    eps(a) = log(A_a) / (a - 1),

evaluated in log space. Fractional orders take the larger of the two
neighbouring integer-order values. Composition over T steps is additive and
the conversion to (eps, delta)-DP is eps + log(1/delta) / (a - 1).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from .errors import AccountingError, CalibrationError, InvalidInputError

logger = logging.getLogger(__name__)

MAX_INT_ORDER = 256
DEFAULT_ORDERS: tuple[float, ...] = tuple(
    sorted(
        {1.0 + 0.25 * k for k in range(1, 251)}  # 1.25, 1.5, ..., 63.5
        | {float(a) for a in range(2, MAX_INT_ORDER + 1)}
    )
)

SIGMA_BRACKET = (0.3, 1e4)
SIGMA_RTOL = 1e-4


@dataclass(frozen=True)
class PrivacyParams:
    sigma: float
    sample_rate: float
    steps: int
    delta: float
    clip_bound: float = 1.0
    epsilon: Optional[float] = None

    def __post_init__(self):
        if not self.sigma > 0:
            raise InvalidInputError(f"sigma must be > 0, got {self.sigma}")
        if not 0 < self.sample_rate <= 1:
            raise InvalidInputError(f"sample rate must lie in (0, 1], got {self.sample_rate}")
        if self.steps < 1:
            raise InvalidInputError(f"steps must be >= 1, got {self.steps}")
        if not 0 < self.delta < 1:
            raise InvalidInputError(f"delta must lie in (0, 1), got {self.delta}")
        if not self.clip_bound > 0:
            raise InvalidInputError(f"clip bound must be > 0, got {self.clip_bound}")


@dataclass(frozen=True)
class RDPCurve:
    orders: tuple
    eps_rdp: tuple

    def __post_init__(self):
        if len(self.orders) != len(self.eps_rdp):
            raise InvalidInputError("orders and eps_rdp differ in length")
        if any(o <= 1 for o in self.orders):
            raise InvalidInputError("Renyi orders must exceed 1")
        if any(b <= a for a, b in zip(self.orders, self.orders[1:])):
            raise InvalidInputError("orders must be strictly increasing")


def _check_q_sigma(q: float, sigma: float) -> None:
    if not 0 < q <= 1:
        raise InvalidInputError(f"sample rate must lie in (0, 1], got {q}")
    if not sigma > 0:
        raise InvalidInputError(f"sigma must be > 0, got {sigma}")


def _log_binom_table(max_order: int) -> np.ndarray:
    """log C(a, k) for 0 <= k <= a <= max_order, -inf above the diagonal."""
    out = np.full((max_order + 1, max_order + 1), -np.inf)
    for a in range(max_order + 1):
        for k in range(a + 1):
            out[a, k] = math.lgamma(a + 1) - math.lgamma(k + 1) - math.lgamma(a - k + 1)
    return out


_LOG_BINOM = _log_binom_table(MAX_INT_ORDER)


@lru_cache(maxsize=4096)
def _integer_order_table(q: float, sigma: float) -> np.ndarray:
    """Per-step RDP for every integer order 0..MAX_INT_ORDER (entries 0 and 1 unused)."""
    orders = np.arange(MAX_INT_ORDER + 1, dtype=float)
    if q == 1.0:
        with np.errstate(divide="ignore"):
            return orders / (2.0 * sigma * sigma)
    k = orders[None, :]
    a = orders[:, None]
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        terms = (
            _LOG_BINOM
            + k * math.log(q)
            + (a - k) * math.log1p(-q)
            + (k * k - k) / (2.0 * sigma * sigma)
        )
        terms = np.where(k <= a, terms, -np.inf)
        top = terms.max(axis=1, keepdims=True)
        log_a = (top + np.log(np.exp(terms - top).sum(axis=1, keepdims=True)))[:, 0]
        out = log_a / (orders - 1.0)
    out[~np.isfinite(out)] = np.inf
    # log-space rounding can leave tiny negatives when A_a is 1 to machine precision
    return np.maximum(out, 0.0)


def _integer_rdp(q: float, sigma: float, order: int) -> float:
    if order > MAX_INT_ORDER:
        return _integer_rdp_direct(q, sigma, order)
    value = float(_integer_order_table(float(q), float(sigma))[order])
    if math.isinf(value):
        logger.warning("RDP bound saturated at order %d (q=%g, sigma=%g)", order, q, sigma)
    return value


def _integer_rdp_direct(q: float, sigma: float, order: int) -> float:
    if q == 1.0:
        return order / (2.0 * sigma * sigma)
    log_a = -math.inf
    for k in range(order + 1):
        term = (
            math.lgamma(order + 1) - math.lgamma(k + 1) - math.lgamma(order - k + 1)
            + k * math.log(q) + (order - k) * math.log1p(-q)
            + (k * k - k) / (2.0 * sigma * sigma)
        )
        hi, lo = max(log_a, term), min(log_a, term)
        log_a = hi if lo == -math.inf else hi + math.log1p(math.exp(lo - hi))
    value = log_a / (order - 1)
    return max(value, 0.0) if math.isfinite(value) else math.inf


def rdp_subsampled_gaussian(q: float, sigma: float, order: float) -> float:
    """Upper bound on the per-step order-``order`` RDP of the subsampled Gaussian.

    Returns ``math.inf`` (with a logged warning) when the bound overflows.
    """
    _check_q_sigma(q, sigma)
    if not order > 1:
        raise InvalidInputError(f"Renyi order must be > 1, got {order}")
    if float(order).is_integer():
        return _integer_rdp(q, sigma, int(order))
    lo, hi = math.floor(order), math.ceil(order)
    candidates = [_integer_rdp(q, sigma, hi)]
    if lo >= 2:
        candidates.append(_integer_rdp(q, sigma, lo))
    return max(candidates)


def compose(per_step: float, steps: int) -> float:
    """RDP of ``steps`` adaptive repetitions at a fixed order."""
    if per_step < 0:
        raise InvalidInputError(f"per-step RDP must be >= 0, got {per_step}")
    if steps < 1:
        raise InvalidInputError(f"steps must be >= 1, got {steps}")
    if per_step == 0:
        return 0.0
    return per_step * steps


def rdp_to_dp(order: float, eps_rdp: float, delta: float) -> float:
    if not order > 1:
        raise InvalidInputError(f"Renyi order must be > 1, got {order}")
    if not 0 < delta < 1:
        raise InvalidInputError(f"delta must lie in (0, 1), got {delta}")
    if eps_rdp < 0:
        raise InvalidInputError(f"RDP epsilon must be >= 0, got {eps_rdp}")
    return eps_rdp + math.log(1.0 / delta) / (order - 1.0)


def rdp_curve(q: float, sigma: float, steps: int, orders: Sequence[float] = DEFAULT_ORDERS) -> RDPCurve:
    return RDPCurve(
        tuple(float(o) for o in orders),
        tuple(compose(rdp_subsampled_gaussian(q, sigma, o), steps) for o in orders),
    )


def epsilon_for(
    sigma: float,
    sample_rate: float,
    steps: int,
    delta: float,
    orders: Sequence[float] = DEFAULT_ORDERS,
) -> tuple[float, float]:
    """Smallest (eps, delta)-DP epsilon over the order grid, and the order attaining it."""
    PrivacyParams(sigma=sigma, sample_rate=sample_rate, steps=steps, delta=delta)
    best_eps, best_order = math.inf, math.nan
    log_inv_delta = math.log(1.0 / delta)
    for order in orders:
        rdp = rdp_subsampled_gaussian(sample_rate, sigma, order)
        if math.isinf(rdp):
            continue
        eps = compose(rdp, steps) + log_inv_delta / (order - 1.0)
        if eps < best_eps:
            best_eps, best_order = eps, float(order)
    if math.isinf(best_eps):
        raise AccountingError(
            f"RDP bound saturated at every order (sigma={sigma}, q={sample_rate}, steps={steps})"
        )
    return best_eps, best_order


def epsilon_for_params(params: PrivacyParams) -> tuple[float, float]:
    return epsilon_for(params.sigma, params.sample_rate, params.steps, params.delta)


def _eps_or_inf(sigma: float, q: float, steps: int, delta: float) -> float:
    try:
        return epsilon_for(sigma, q, steps, delta)[0]
    except AccountingError:
        return math.inf


def calibrate_sigma(
    target_eps: float,
    delta: float,
    q: float,
    steps: int,
    bracket: tuple[float, float] = SIGMA_BRACKET,
    rtol: float = SIGMA_RTOL,
) -> float:
    """Smallest noise multiplier (to relative tolerance ``rtol``) meeting ``target_eps``.

    The result satisfies ``epsilon_for(sigma) <= target_eps < epsilon_for(sigma * (1 - rtol))``.
    """
    if not target_eps > 0:
        raise InvalidInputError(f"target epsilon must be > 0, got {target_eps}")
    lo, hi = bracket
    eps_lo = _eps_or_inf(lo, q, steps, delta)
    eps_hi = _eps_or_inf(hi, q, steps, delta)
    if eps_hi > target_eps:
        raise CalibrationError(
            f"target epsilon {target_eps:g} unreachable: sigma={hi:g} still gives epsilon={eps_hi:g} "
            f"(sigma={lo:g} gives {eps_lo:g})"
        )
    if eps_lo <= target_eps:
        raise CalibrationError(
            f"target epsilon {target_eps:g} is met already at the bracket floor sigma={lo:g} "
            f"(epsilon={eps_lo:g}; sigma={hi:g} gives {eps_hi:g}); widen the bracket"
        )
    # invariant: eps(lo) > target >= eps(hi)
    while lo < hi * (1.0 - rtol):
        mid = math.sqrt(lo * hi)
        if _eps_or_inf(mid, q, steps, delta) <= target_eps:
            hi = mid
        else:
            lo = mid
    return hi
