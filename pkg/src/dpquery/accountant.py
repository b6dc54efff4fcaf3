"""Renyi-DP accounting for the Poisson-subsampled Gaussian mechanism.

Per-step RDP at integer order alpha uses the binomial-expansion bound

    rdp(alpha) = log( sum_{k=0..alpha} C(alpha,k) (1-q)^(alpha-k) q^k
                      * exp(k(k-1)/(2 sigma^2)) ) / (alpha - 1)

evaluated entirely in log space; C(alpha,k) * exp(k(k-1)/(2 sigma^2))
overflows double precision already for moderate alpha at small sigma.
Composition over T identical steps multiplies per-order RDP by T, and the
conversion to (epsilon, delta) takes the minimum over orders of
rdp(alpha) + log(1/delta)/(alpha - 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from scipy.special import gammaln, logsumexp

DEFAULT_ORDERS: tuple[int, ...] = tuple(range(2, 65)) + (128, 256)


@dataclass
class PrivacyBudget:
    epsilon: float
    delta: float

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must be in (0,1), got {self.delta}")


@dataclass
class AccountantState:
    q: float
    sigma: float
    steps: int
    orders: tuple[int, ...] = field(default=DEFAULT_ORDERS)

    def __post_init__(self):
        self.orders = tuple(sorted(self.orders))
        if any(a <= 1 for a in self.orders):
            raise ValueError("all RDP orders must exceed 1")
        if not 0 < self.q <= 1:
            raise ValueError(f"sampling rate must be in (0,1], got {self.q}")
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.steps < 0:
            raise ValueError("steps must be nonnegative")


def rdp_subsampled_gaussian(q: float, sigma: float, order: int) -> float:
    """Per-step RDP of the subsampled Gaussian mechanism at an integer order."""
    if order < 2 or int(order) != order:
        raise ValueError(f"order must be an integer >= 2, got {order}")
    if q == 0:
        return 0.0
    if not 0 < q <= 1:
        raise ValueError(f"sampling rate must be in [0,1], got {q}")
    if sigma <= 0:
        raise ValueError("sigma must be positive; sigma=0 has unbounded privacy loss")
    alpha = int(order)
    log_q = math.log(q)
    log_1mq = math.log1p(-q) if q < 1 else -math.inf
    log_terms = []
    for k in range(alpha + 1):
        log_binom = gammaln(alpha + 1) - gammaln(k + 1) - gammaln(alpha - k + 1)
        if q == 1.0:
            if k < alpha:
                continue  # (1-q)^(alpha-k) = 0
            log_coef = log_binom + k * log_q
        else:
            log_coef = log_binom + k * log_q + (alpha - k) * log_1mq
        log_terms.append(log_coef + k * (k - 1) / (2.0 * sigma * sigma))
    return float(logsumexp(log_terms)) / (alpha - 1)


def compose(rdp_per_step: list[float], steps: int) -> list[float]:
    """RDP of T identical composed steps: elementwise multiplication by T."""
    if steps < 0:
        raise ValueError("steps must be nonnegative")
    return [r * steps for r in rdp_per_step]


def to_epsilon(rdp_totals: list[float], orders, delta: float) -> tuple[float, int]:
    """Convert per-order RDP totals to (epsilon, best_order) at a target delta."""
    if not 0 < delta < 1:
        raise ValueError(f"delta must be in (0,1), got {delta}")
    orders = list(orders)
    if not orders or len(orders) != len(rdp_totals):
        raise ValueError("orders and rdp totals must be nonempty and aligned")
    log_inv_delta = math.log(1.0 / delta)
    best_eps, best_order = math.inf, orders[0]
    for a, r in zip(orders, rdp_totals):
        eps = r + log_inv_delta / (a - 1)
        if eps < best_eps:
            best_eps, best_order = eps, a
    return best_eps, best_order


def epsilon_for(q: float, sigma: float, steps: int, delta: float, orders=DEFAULT_ORDERS) -> tuple[float, int]:
    """End-to-end epsilon of T subsampled Gaussian steps."""
    per_step = [rdp_subsampled_gaussian(q, sigma, a) for a in orders]
    return to_epsilon(compose(per_step, steps), orders, delta)


def calibrate_sigma(
    target: PrivacyBudget,
    q: float,
    steps: int,
    tolerance: float = 1e-3,
    orders=DEFAULT_ORDERS,
) -> float:
    """Smallest noise multiplier achieving the target budget, by bisection.

    The bracket grows geometrically until the achieved epsilon straddles the
    target; bisection then stops once the achieved epsilon is within
    ``tolerance`` of the target or the bracket is narrower than 1e-6.
    """
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")

    def achieved(sigma: float) -> float:
        return epsilon_for(q, sigma, steps, target.delta, orders)[0]

    hi = 0.5
    while achieved(hi) > target.epsilon:
        hi *= 2.0
        if hi > 1e6:
            raise ValueError(
                f"target epsilon {target.epsilon} unreachable with q={q}, steps={steps}"
            )
    lo = hi / 2.0
    while achieved(lo) <= target.epsilon:
        lo /= 2.0
        if lo < 1e-6:
            return hi  # even negligible noise meets the target
    while hi - lo > 1e-6:
        mid = 0.5 * (lo + hi)
        eps_mid = achieved(mid)
        if eps_mid <= target.epsilon:
            hi = mid
            if target.epsilon - eps_mid < tolerance:
                break
        else:
            lo = mid
    return hi


def default_delta(n: int) -> float:
    """Dataset-size rule delta = 1/(2n)."""
    if n < 1:
        raise ValueError(f"dataset size must be >= 1, got {n}")
    return 1.0 / (2.0 * n)
