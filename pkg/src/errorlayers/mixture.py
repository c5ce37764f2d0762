"""
Layered dichotomic perturbation of a Normal's scale.

Each layer ``i`` multiplies the current scale by ``1 + eps_i`` with
probability ``p_i`` or by ``1 - eps_i`` otherwise.  After ``n`` layers the
law of ``X`` is a finite scale mixture of Normals with (at most) ``2**n``
components sharing the location ``mu``:

.. math::
    g_n(x) = \\sum_i w_i \\, \\phi(x; \\mu, \\sigma M_i)

When every layer has the same error rate and branch probability the
``2**n`` branches collapse onto ``n + 1`` distinct scales with binomial
weights.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp
from scipy.stats import binom

MAX_ENUMERATION_LAYERS = 30
WEIGHT_TOL = 1e-12

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


class CapacityError(ValueError):
    """Raised when full enumeration would need more than ``2**30`` branches.

    Callers should switch to :func:`binomial_multipliers` (constant rates)
    or to the Monte Carlo sampler.
    """


@dataclass(frozen=True)
class GaussianSpec:
    """Baseline Normal with location ``mu`` and scale ``sigma``."""

    mu: float = 0.0
    sigma: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.mu) and math.isfinite(self.sigma)):
            raise ValueError(f"mu and sigma must be finite, got {self.mu}, {self.sigma}")
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")


@dataclass(frozen=True)
class ErrorSchedule:
    """Per-layer error rates and probabilities of overestimation.

    ``layers`` is a tuple of ``(epsilon_i, p_i)`` pairs, outermost layer
    first.  An empty schedule means no uncertainty on the scale.
    """

    layers: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        layers = tuple((float(e), float(p)) for e, p in self.layers)
        for i, (eps, p) in enumerate(layers, start=1):
            if not 0.0 <= eps < 1.0:
                raise ValueError(f"layer {i}: epsilon must lie in [0, 1), got {eps}")
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"layer {i}: p must lie in [0, 1], got {p}")
        object.__setattr__(self, "layers", layers)

    @classmethod
    def constant(cls, epsilon: float, n: int, p: float = 0.5) -> "ErrorSchedule":
        if n < 0:
            raise ValueError(f"n must be >= 0, got {n}")
        return cls(tuple((epsilon, p) for _ in range(n)))

    @classmethod
    def geometric(cls, epsilon1: float, kappa: float, n: int, p: float = 0.5) -> "ErrorSchedule":
        """Rates decaying as ``eps_i = kappa**(i-1) * epsilon1``."""
        if not 0.0 <= kappa <= 1.0:
            raise ValueError(f"kappa must lie in [0, 1], got {kappa}")
        if n < 0:
            raise ValueError(f"n must be >= 0, got {n}")
        return cls(tuple((epsilon1 * kappa**i, p) for i in range(n)))

    @property
    def n(self) -> int:
        return len(self.layers)

    @property
    def epsilons(self) -> np.ndarray:
        return np.array([e for e, _ in self.layers], dtype=float)

    @property
    def probs(self) -> np.ndarray:
        return np.array([p for _, p in self.layers], dtype=float)

    def is_constant(self) -> bool:
        """True when all layers share one ``(epsilon, p)`` pair."""
        return len(set(self.layers)) <= 1


@dataclass(frozen=True)
class ScaleMixture:
    """Finite mixture of centred Normals ``sum_i w_i N(mu, scales_i**2)``."""

    mu: float
    weights: np.ndarray
    scales: np.ndarray
    _log_weights: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        s = np.asarray(self.scales, dtype=float)
        if w.ndim != 1 or w.shape != s.shape or w.size == 0:
            raise ValueError("weights and scales must be non-empty 1-d arrays of equal length")
        if np.any(w < 0):
            raise ValueError("weights must be non-negative")
        if abs(w.sum() - 1.0) > WEIGHT_TOL:
            raise ValueError(f"weights sum to {w.sum()!r}, not 1")
        if np.any(s <= 0) or not np.all(np.isfinite(s)):
            raise ValueError("scales must be finite and positive")
        w.setflags(write=False)
        s.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "scales", s)
        with np.errstate(divide="ignore"):
            object.__setattr__(self, "_log_weights", np.log(w))

    @property
    def count(self) -> int:
        return self.weights.size

    @property
    def max_scale(self) -> float:
        return float(self.scales.max())

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        z = (x[..., None] - self.mu) / self.scales
        comp = np.exp(-0.5 * z * z) / (self.scales * math.sqrt(2.0 * math.pi))
        return comp @ self.weights

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        z = (x[..., None] - self.mu) / self.scales
        terms = self._log_weights - 0.5 * z * z - np.log(self.scales) - _LOG_SQRT_2PI
        return logsumexp(terms, axis=-1)


def sign_matrix(n: int) -> np.ndarray:
    """All ``2**n`` sign tuples over {-1, +1}, shape ``(2**n, n)``.

    Rows are in lexicographic order with -1 before +1 and the first layer
    most significant, so row 0 is all minus signs.
    """
    if n > MAX_ENUMERATION_LAYERS:
        raise CapacityError(f"{n} layers exceeds the enumeration cap of {MAX_ENUMERATION_LAYERS}")
    if n == 0:
        return np.empty((1, 0), dtype=np.int8)
    return np.array(list(itertools.product((-1, 1), repeat=n)), dtype=np.int8)


def enumerate_multipliers(schedule: ErrorSchedule) -> tuple[np.ndarray, np.ndarray]:
    """Weights and scale multipliers of every branch of the layer tree.

    Returns ``(weights, multipliers)``, each of length ``2**n`` and ordered
    as the rows of :func:`sign_matrix`.  The product for each branch is
    accumulated over layers ``1..n`` in that order.

    Raises
    ------
    CapacityError
        If ``schedule.n`` exceeds :data:`MAX_ENUMERATION_LAYERS`.
    """
    n = schedule.n
    if n > MAX_ENUMERATION_LAYERS:
        raise CapacityError(
            f"{n} layers means 2**{n} branches; use binomial_multipliers "
            f"(constant rates) or the sampler instead"
        )
    weights = np.ones(1)
    mults = np.ones(1)
    # Appending the new layer as the least significant digit keeps rows in
    # sign_matrix order.
    for eps, p in schedule.layers:
        mults = np.stack([mults * (1.0 - eps), mults * (1.0 + eps)], axis=1).ravel()
        weights = np.stack([weights * (1.0 - p), weights * p], axis=1).ravel()
    return weights, mults


def binomial_multipliers(epsilon: float, n: int, p: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """Collapsed tree for a constant rate: ``n + 1`` distinct multipliers.

    ``multiplier_j = (1 + eps)**j * (1 - eps)**(n - j)`` carries the
    binomial weight ``C(n, j) p**j (1 - p)**(n - j)``, ``j = 0..n``.
    """
    if not 0.0 <= epsilon < 1.0:
        raise ValueError(f"epsilon must lie in [0, 1), got {epsilon}")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    j = np.arange(n + 1)
    if n <= 1000:
        weights = np.array([math.comb(n, i) * p**i * (1.0 - p) ** (n - i) for i in range(n + 1)])
    else:
        weights = binom.pmf(j, n, p)
    mults = (1.0 + epsilon) ** j * (1.0 - epsilon) ** (n - j)
    return weights, mults


def aggregate_multipliers(weights, multipliers, rtol: float = 1e-12):
    """Merge branches whose multipliers agree to ``rtol``.

    Returns ``(weights, multipliers)`` sorted by increasing multiplier.
    Products of the same factors taken in different orders can differ in
    the last bit, so grouping is tolerance based rather than exact.
    """
    weights = np.asarray(weights, dtype=float)
    multipliers = np.asarray(multipliers, dtype=float)
    order = np.argsort(multipliers, kind="stable")
    m = multipliers[order]
    w = weights[order]
    new_group = np.empty(m.size, dtype=bool)
    new_group[0] = True
    new_group[1:] = np.diff(m) > rtol * m[1:]
    ids = np.cumsum(new_group) - 1
    out_w = np.bincount(ids, weights=w)
    out_m = m[new_group]
    return out_w, out_m


def mixture_from(base: GaussianSpec, schedule: ErrorSchedule) -> ScaleMixture:
    """Materialise the layered mixture for ``base`` under ``schedule``.

    Constant schedules take the binomial path, which has no layer cap.
    """
    if schedule.n == 0:
        return ScaleMixture(base.mu, np.ones(1), np.array([base.sigma]))
    if schedule.is_constant():
        eps, p = schedule.layers[0]
        weights, mults = binomial_multipliers(eps, schedule.n, p)
    else:
        weights, mults = enumerate_multipliers(schedule)
    keep = weights > 0
    weights = weights[keep]
    return ScaleMixture(base.mu, weights / weights.sum(), base.sigma * mults[keep])


def density(mix: ScaleMixture, x):
    """Mixture density ``sum_i w_i phi(x; mu, s_i)``; vectorised over ``x``."""
    return mix.pdf(x)


def log_density_curve(mix: ScaleMixture, x_grid: Sequence[float]) -> np.ndarray:
    """``(len(x_grid), 2)`` array of ``x`` and ``log g(x)``.

    Evaluated with a log-sum-exp over components, so far-tail points stay
    finite long after ``density`` underflows; ``-inf`` only appears if
    every component contributes exactly zero.
    """
    x = np.asarray(x_grid, dtype=float)
    if x.size == 0:
        raise ValueError("x_grid must be non-empty")
    return np.column_stack([x, mix.logpdf(x)])
