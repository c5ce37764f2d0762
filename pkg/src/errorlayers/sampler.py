"""
Seeded Monte Carlo counterparts of the closed forms.

Draws are generated in fixed-size blocks.  Block ``b`` of stream ``s``
always uses the generator seeded from ``SeedSequence(seed, spawn_key=(s, b))``
and blocks are concatenated in index order, so output is bit-identical for
any number of worker threads.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import special

from .mixture import ErrorSchedule, GaussianSpec

BLOCK_SIZE = 1 << 16


@dataclass(frozen=True)
class SimConfig:
    seed: int = 12345
    samples: int = 1_000_000
    stream_id: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.samples <= 0:
            raise ValueError(f"samples must be positive, got {self.samples}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


def _generator(cfg: SimConfig, block: int) -> np.random.Generator:
    ss = np.random.SeedSequence(cfg.seed, spawn_key=(cfg.stream_id, block))
    return np.random.Generator(np.random.PCG64(ss))


def _blocked(cfg: SimConfig, draw: Callable[[np.random.Generator, int], np.ndarray]) -> np.ndarray:
    sizes = [BLOCK_SIZE] * (cfg.samples // BLOCK_SIZE)
    if cfg.samples % BLOCK_SIZE:
        sizes.append(cfg.samples % BLOCK_SIZE)
    job = lambda b: draw(_generator(cfg, b), sizes[b])  # noqa: E731
    if cfg.workers == 1 or len(sizes) == 1:
        parts = [job(b) for b in range(len(sizes))]
    else:
        with ThreadPoolExecutor(cfg.workers) as pool:
            parts = list(pool.map(job, range(len(sizes))))
    return np.concatenate(parts)


def _layer_scales(rng: np.random.Generator, size: int, sigma: float, schedule: ErrorSchedule) -> np.ndarray:
    scale = np.full(size, float(sigma))
    for eps, p in schedule.layers:
        up = rng.random(size) < p
        scale *= np.where(up, 1.0 + eps, 1.0 - eps)
    return scale


def sample_scales(base: GaussianSpec, schedule: ErrorSchedule, cfg: SimConfig) -> np.ndarray:
    """Draws of the perturbed scale ``sigma * prod(1 +/- eps_i)``."""
    return _blocked(cfg, lambda rng, m: _layer_scales(rng, m, base.sigma, schedule))


def sample_layered(base: GaussianSpec, schedule: ErrorSchedule, cfg: SimConfig) -> np.ndarray:
    """Walk the layer tree once per draw, then draw ``X ~ Normal(mu, scale)``."""

    def draw(rng, m):
        scale = _layer_scales(rng, m, base.sigma, schedule)
        return base.mu + scale * rng.standard_normal(m)

    return _blocked(cfg, draw)


def sample_precision_chain(lambda_hat: float, error_dists: Sequence, cfg: SimConfig) -> np.ndarray:
    """Draws of ``lambda_hat * prod_i (1 + eps_i)``.

    ``error_dists`` are frozen scipy distributions (anything with
    ``rvs(size=, random_state=)`` and ``support()``), each with zero mean
    and support inside ``(-1, 1)`` so every factor stays positive.
    """
    if lambda_hat <= 0:
        raise ValueError(f"lambda_hat must be positive, got {lambda_hat}")
    for i, d in enumerate(error_dists, start=1):
        lo, hi = d.support()
        if lo < -1.0 or hi > 1.0 or (lo == -1.0 and d.pdf(-1.0) > 0):
            raise ValueError(f"error {i}: support ({lo}, {hi}) is not inside (-1, 1)")

    def draw(rng, m):
        log_lam = np.full(m, math.log(lambda_hat))
        for d in error_dists:
            log_lam += np.log1p(d.rvs(size=m, random_state=rng))
        return np.exp(log_lam)

    return _blocked(cfg, draw)


def sample_cnl(s2: float, cfg: SimConfig) -> np.ndarray:
    """``lambda ~ Lognormal(0, s2)`` then ``X ~ Normal(0, 1 / sqrt(lambda))``."""
    if not s2 > 0:
        raise ValueError(f"s2 must be positive, got {s2}")
    sd = math.sqrt(s2)

    def draw(rng, m):
        u = sd * rng.standard_normal(m)
        return np.exp(-0.5 * u) * rng.standard_normal(m)

    return _blocked(cfg, draw)


# -- estimators --------------------------------------------------------------

@dataclass(frozen=True)
class Estimate:
    value: float
    se: float

    def z(self, target: float) -> float:
        if self.se == 0:
            return 0.0 if self.value == target else math.copysign(math.inf, self.value - target)
        return (self.value - target) / self.se


def _central(x: np.ndarray):
    c = x - x.mean()
    c2 = c * c
    return c, c2, c2.mean(), (c2 * c).mean(), (c2 * c2).mean()


def mean_estimate(x) -> Estimate:
    x = np.asarray(x, dtype=float)
    return Estimate(float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size)))


def variance_estimate(x) -> Estimate:
    """Sample variance with a delta-method standard error."""
    x = np.asarray(x, dtype=float)
    _, c2, m2, _, _ = _central(x)
    return Estimate(float(m2), float((c2 - m2).std() / math.sqrt(x.size)))


def skewness_estimate(x) -> Estimate:
    x = np.asarray(x, dtype=float)
    c, c2, m2, m3, _ = _central(x)
    g = m3 / m2**1.5
    infl = (c2 * c - m3 - 3.0 * m2 * c) / m2**1.5 - 1.5 * g * (c2 - m2) / m2
    return Estimate(float(g), float(infl.std() / math.sqrt(x.size)))


def excess_kurtosis_estimate(x) -> Estimate:
    x = np.asarray(x, dtype=float)
    c, c2, m2, m3, m4 = _central(x)
    k = m4 / m2**2
    infl = (c2 * c2 - m4 - 4.0 * m3 * c) / m2**2 - 2.0 * k * (c2 - m2) / m2
    return Estimate(float(k - 3.0), float(infl.std() / math.sqrt(x.size)))


def tail_probability(x, k: float) -> Estimate:
    """Plain indicator estimate of ``P(X >= k)``."""
    hits = np.asarray(x) >= k
    p = float(hits.mean())
    return Estimate(p, math.sqrt(p * (1.0 - p) / hits.size))


def tail_probability_importance(base: GaussianSpec, schedule: ErrorSchedule, k: float,
                                cfg: SimConfig) -> Estimate:
    """Importance-sampled ``P(X >= k)`` for ``k`` above the location.

    Given the branch scale ``s``, ``X`` is drawn from ``Normal(k, s)`` and
    weighted by the likelihood ratio against ``Normal(mu, s)``, which is
    unbiased and keeps roughly half of the draws in the tail.
    """
    shift = k - base.mu

    def draw(rng, m):
        s = _layer_scales(rng, m, base.sigma, schedule)
        z = rng.standard_normal(m)
        y = shift + s * z  # offset from mu under the proposal
        # phi(y/s) / phi((y - shift)/s) = exp(-(shift*y - shift^2/2)/s^2)
        w = np.exp(-(shift * y - 0.5 * shift * shift) / (s * s))
        return np.where(y >= shift, w, 0.0)

    vals = _blocked(cfg, draw)
    return mean_estimate(vals)


def conditional_tail_probability(base: GaussianSpec, schedule: ErrorSchedule, k: float,
                                 cfg: SimConfig) -> Estimate:
    """Average of ``P(X >= k | scale)`` over sampled scales (exact given the branch)."""
    s = sample_scales(base, schedule, cfg)
    return mean_estimate(0.5 * special.erfc((k - base.mu) / (math.sqrt(2.0) * s)))
