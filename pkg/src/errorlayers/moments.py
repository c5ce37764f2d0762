"""Closed-form moments of the layered mixture and their brute-force oracle."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .mixture import ErrorSchedule, GaussianSpec, ScaleMixture

TRUNCATION_TOL = 1e-16
_MAX_TERMS = 10_000_000


class ClosedFormUnavailable(ValueError):
    """The closed forms assume equiprobable branches; simulate instead."""


class DivergenceError(ArithmeticError):
    """An infinite product was requested that does not converge."""


@dataclass(frozen=True)
class MomentSet:
    mean: float
    variance: float
    skewness: float
    excess_kurtosis: float
    raw: tuple[float, float, float, float]


@dataclass(frozen=True)
class DecaySchedule:
    """Geometrically decaying rates ``eps_i = kappa**(i-1) * epsilon1``.

    ``n`` may be ``math.inf`` for the limiting product.
    """

    epsilon1: float
    kappa: float
    n: float = math.inf

    def __post_init__(self):
        if not 0.0 <= self.epsilon1 < 1.0:
            raise ValueError(f"epsilon1 must lie in [0, 1), got {self.epsilon1}")
        if not 0.0 <= self.kappa <= 1.0:
            raise ValueError(f"kappa must lie in [0, 1], got {self.kappa}")
        if self.n != math.inf and (self.n < 0 or int(self.n) != self.n):
            raise ValueError(f"n must be a non-negative integer or math.inf, got {self.n}")

    def to_schedule(self) -> ErrorSchedule:
        if self.n == math.inf:
            raise ValueError("cannot materialise an infinite schedule")
        return ErrorSchedule.geometric(self.epsilon1, self.kappa, int(self.n))


def _log_infinite_product(log_factor: Callable[[int], float], term: Callable[[int], float],
                          n: float, tol: float) -> float:
    """Sum ``log_factor(i)`` for ``i = 0..n-1`` (or until ``|term(i)| < tol``)."""
    total = 0.0
    i = 0
    limit = _MAX_TERMS if n == math.inf else int(n)
    while i < limit:
        if n == math.inf and abs(term(i)) < tol:
            return total
        total += log_factor(i)
        i += 1
    if n == math.inf:
        raise DivergenceError(f"product not converged after {_MAX_TERMS} factors")
    return total


def q_pochhammer(a: float, q: float, n: float = math.inf, tol: float = TRUNCATION_TOL) -> float:
    """``prod_{i=0}^{n-1} (1 + a q**i)``; ``n = math.inf`` for the limit.

    The infinite product stops at the first ``i`` with ``|a q**i| < tol``.
    """
    if n == math.inf:
        if a == 0.0:
            return 1.0
        if abs(q) >= 1.0:
            raise DivergenceError(f"infinite product needs |q| < 1, got q={q}")
    elif n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    return math.exp(_log_infinite_product(
        lambda i: math.log1p(a * q**i), lambda i: a * q**i, n, tol))


def _check_decay(d: DecaySchedule):
    if d.n == math.inf and d.kappa == 1.0 and d.epsilon1 > 0.0:
        raise DivergenceError("kappa = 1 with infinitely many layers: moments grow without bound")


def decaying_eps_variance(base: GaussianSpec, d: DecaySchedule, tol: float = TRUNCATION_TOL) -> float:
    """``sigma**2 * prod_{i<n} (1 + epsilon1**2 kappa**(2i))``."""
    _check_decay(d)
    if d.epsilon1 == 0.0:
        return base.sigma**2
    e2, k2 = d.epsilon1**2, d.kappa**2
    log_p = _log_infinite_product(
        lambda i: math.log1p(e2 * k2**i), lambda i: e2 * k2**i, d.n, tol)
    return base.sigma**2 * math.exp(log_p)


def decaying_eps_fourth_central(base: GaussianSpec, d: DecaySchedule,
                                tol: float = TRUNCATION_TOL) -> float:
    """``3 sigma**4 * prod_{i<n} (1 + 6 eps_i**2 + eps_i**4)``, ``eps_i = kappa**i epsilon1``."""
    _check_decay(d)
    if d.epsilon1 == 0.0:
        return 3.0 * base.sigma**4
    e2, k2 = d.epsilon1**2, d.kappa**2

    def term(i):
        t = e2 * k2**i
        return 6.0 * t + t * t

    log_p = _log_infinite_product(lambda i: math.log1p(term(i)), term, d.n, tol)
    return 3.0 * base.sigma**4 * math.exp(log_p)


def _require_equiprobable(schedule: ErrorSchedule):
    if schedule.n and np.any(schedule.probs != 0.5):
        raise ClosedFormUnavailable(
            "closed-form moments need p = 1/2 on every layer; use the sampler "
            "(cmd 'simulate') or mixture_moments_oracle"
        )


def constant_eps_moments(base: GaussianSpec, epsilon: float | ErrorSchedule, n: int | None = None) -> MomentSet:
    """Moments after ``n`` equiprobable layers with a constant rate.

    Accepts either ``(epsilon, n)`` or a constant :class:`ErrorSchedule`.
    Everything goes through logarithms, so huge ``n`` gives ``inf``
    variance rather than an overflow error, and the excess kurtosis
    ``3 * ((1 + 6e^2 + e^4)**n / (1 + e^2)**(2n) - 1)`` stays accurate for
    tiny rates.
    """
    if isinstance(epsilon, ErrorSchedule):
        schedule = epsilon
        _require_equiprobable(schedule)
        if not schedule.is_constant():
            raise ClosedFormUnavailable("schedule rates are not constant; use layered_moments")
        n = schedule.n
        epsilon = schedule.layers[0][0] if n else 0.0
    if n is None or n < 0:
        raise ValueError(f"n must be a non-negative integer, got {n}")
    if not 0.0 <= epsilon < 1.0:
        raise ValueError(f"epsilon must lie in [0, 1), got {epsilon}")
    e2 = epsilon * epsilon
    log_v = n * math.log1p(e2)
    log_4 = n * math.log1p(6.0 * e2 + e2 * e2)
    s2 = base.sigma**2
    with np.errstate(over="ignore"):
        es2 = s2 * float(np.exp(log_v))
        es4 = s2 * s2 * float(np.exp(log_4))
        excess = 3.0 * float(np.expm1(log_4 - 2.0 * log_v))
    mu = base.mu
    raw = (mu, mu**2 + es2, mu**3 + 3.0 * mu * es2, mu**4 + 6.0 * mu**2 * es2 + 3.0 * es4)
    return MomentSet(mean=mu, variance=es2, skewness=0.0, excess_kurtosis=excess, raw=raw)


def layered_moments(base: GaussianSpec, schedule: ErrorSchedule) -> MomentSet:
    """Closed-form moments for any equiprobable schedule (rates may vary by layer)."""
    _require_equiprobable(schedule)
    e2 = schedule.epsilons**2
    log_v = float(np.log1p(e2).sum())
    log_4 = float(np.log1p(6.0 * e2 + e2 * e2).sum())
    es2 = base.sigma**2 * math.exp(log_v)
    es4 = base.sigma**4 * math.exp(log_4)
    mu = base.mu
    raw = (mu, mu**2 + es2, mu**3 + 3.0 * mu * es2, mu**4 + 6.0 * mu**2 * es2 + 3.0 * es4)
    return MomentSet(mean=mu, variance=es2, skewness=0.0,
                     excess_kurtosis=3.0 * math.expm1(log_4 - 2.0 * log_v), raw=raw)


def layers_for_excess_kurtosis(epsilon: float, target: float) -> int:
    """Smallest ``n`` whose constant-rate excess kurtosis exceeds ``target``.

    Any positive rate eventually breaks through any bound; for tiny rates
    ``n`` is astronomically large but still computable.
    """
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    e2 = epsilon * epsilon
    growth = math.log1p(6.0 * e2 + e2 * e2) - 2.0 * math.log1p(e2)
    n = math.floor(math.log1p(target / 3.0) / growth) + 1
    return int(n)


def mixture_moments_oracle(mix: ScaleMixture) -> MomentSet:
    """Exact moments from ``sum_i w_i`` times each component's Normal moments."""
    w = mix.weights
    s2 = mix.scales**2
    es2 = float(w @ s2)
    es4 = float(w @ (s2 * s2))
    mu = mix.mu
    raw = (
        float(w.sum()) * mu,
        mu**2 + es2,
        mu**3 + 3.0 * mu * es2,
        mu**4 + 6.0 * mu**2 * es2 + 3.0 * es4,
    )
    # Var(s^2) / E[s^2]^2 avoids cancelling es4 against es2**2.
    spread = float(w @ (s2 - es2) ** 2)
    return MomentSet(mean=raw[0], variance=es2, skewness=0.0,
                     excess_kurtosis=3.0 * spread / es2**2, raw=raw)
