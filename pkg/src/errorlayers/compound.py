"""
Limit laws for multiplicative errors on the precision of a Normal.

With ``lambda = lambda_hat * prod(1 + eps_i)`` and independent small errors,
``log(lambda)`` is approximately ``Normal(log(lambda_hat), S^2)`` where
``S^2`` is the sum of the error variances.  Mixing a centred Normal over a
``Lognormal(0, S^2)`` precision gives the Compound Normal-Lognormal (CNL),
which has no closed form and is evaluated here by Gauss-Hermite quadrature.
Replacing the Lognormal by the Gamma with the same coefficient of
variation gives a closed-form Student-t.

Gamma conventions: :class:`PrecisionPrior` carries the *rate* ``beta``;
:func:`failure_rate_gamma` takes shape and *scale*.  Convert with
``scale = 1 / beta``.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import integrate, special, stats

_SQRT_2PI = math.sqrt(2.0 * math.pi)

QUAD_TOL = 1e-9
QUAD_START_NODES = 64
QUAD_MAX_NODES = 1024


class QuadratureError(ArithmeticError):
    """Node doubling failed to stabilise within the node cap."""

    def __init__(self, message: str, nodes: int):
        super().__init__(message)
        self.nodes = nodes


@dataclass(frozen=True)
class ErrorChain:
    """Variances of the per-layer errors on the precision, each at least ``c``."""

    variances: tuple[float, ...]
    c: float = 1e-12

    def __post_init__(self):
        object.__setattr__(self, "variances", tuple(float(v) for v in self.variances))
        if self.c <= 0:
            raise ValueError(f"lower bound c must be positive, got {self.c}")
        for i, v in enumerate(self.variances, start=1):
            if not v >= self.c:
                raise ValueError(f"layer {i}: variance {v} is below the floor c={self.c}")


def compose_s2(chain: ErrorChain) -> float:
    """Total log-variance ``S^2 = sum_i var(eps_i)``."""
    if not chain.variances:
        raise ValueError("error chain is empty")
    return math.fsum(chain.variances)


@dataclass(frozen=True)
class StudentTSpec:
    dof: float
    location: float
    scale_param: float


@dataclass(frozen=True)
class PrecisionPrior:
    """Gamma(alpha, rate=beta) matched in CV to Lognormal(0, s2).

    The match also preserves the mean, ``alpha / beta = exp(s2 / 2)``.
    """

    s2: float
    alpha: float
    beta: float

    @property
    def cv(self) -> float:
        return 1.0 / math.sqrt(self.alpha)

    @property
    def student_t(self) -> StudentTSpec:
        return StudentTSpec(dof=2.0 * self.alpha, location=0.0, scale_param=self.beta)

    def gamma(self):
        """Frozen scipy Gamma for the precision."""
        return stats.gamma(self.alpha, scale=1.0 / self.beta)

    def lognormal(self):
        """Frozen scipy Lognormal(0, s2) the Gamma stands in for."""
        return stats.lognorm(math.sqrt(self.s2))


def match_gamma(s2: float) -> PrecisionPrior:
    """Gamma with the coefficient of variation of ``Lognormal(0, s2)``.

    ``alpha = 1 / (e^{s2} - 1)`` and ``beta = e^{-s2/2} / (e^{s2} - 1)``.
    """
    if not s2 > 0:
        raise ValueError(f"s2 must be positive for a non-degenerate prior, got {s2}")
    d = math.expm1(s2)
    return PrecisionPrior(s2=float(s2), alpha=1.0 / d, beta=math.exp(-0.5 * s2) / d)


def lognormal_cv(s2: float) -> float:
    return math.sqrt(math.expm1(s2))


def s2_for_cv(cv: float) -> float:
    """Log-variance whose Lognormal has coefficient of variation ``cv``."""
    return math.log1p(cv * cv)


@functools.lru_cache(maxsize=None)
def _hermite_rule(nodes: int):
    t, w = special.roots_hermite(nodes)
    keep = w > 0
    return t[keep], w[keep] / math.sqrt(math.pi)


def _cnl_rule(x, s2: float, nodes: int):
    t, w = _hermite_rule(nodes)
    u = math.sqrt(2.0 * s2) * t
    lam = np.exp(u)
    x = np.asarray(x, dtype=float)
    integrand = np.sqrt(lam) * np.exp(-0.5 * lam * (x[..., None] ** 2))
    return integrand @ w / _SQRT_2PI


def cnl_density(x, s2: float, tol: float = QUAD_TOL, max_nodes: int = QUAD_MAX_NODES):
    """Compound Normal-Lognormal density at ``x``.

    Integrates ``phi(x; lambda)`` against ``Lognormal(0, s2)`` after the
    substitution ``lambda = e^u``, using a Gauss-Hermite rule that starts at
    64 nodes and doubles until two successive results agree to ``tol``
    (absolute).

    Raises
    ------
    QuadratureError
        If the rule has not settled by ``max_nodes``.
    """
    if not s2 > 0:
        raise ValueError(f"s2 must be positive, got {s2}")
    nodes = QUAD_START_NODES
    prev = _cnl_rule(x, s2, nodes)
    while nodes < max_nodes:
        nodes *= 2
        cur = _cnl_rule(x, s2, nodes)
        if np.max(np.abs(cur - prev)) <= tol:
            return cur if np.ndim(cur) else float(cur)
        prev = cur
    raise QuadratureError(
        f"CNL quadrature not converged to {tol:g} at {nodes} nodes (s2={s2})", nodes)


def cnl_variance(s2: float) -> float:
    """``E[1 / lambda] = e^{s2 / 2}``."""
    return math.exp(0.5 * s2)


def cnl_excess_kurtosis(s2: float) -> float:
    return 3.0 * math.expm1(s2)


@dataclass(frozen=True)
class CNLQuadratureMoments:
    mass: float
    variance: float
    excess_kurtosis: float


def cnl_moments_quadrature(s2: float) -> CNLQuadratureMoments:
    """Mass, variance and excess kurtosis by integrating the CNL density over ``x``."""

    def integral(power):
        f = lambda x: x**power * cnl_density(x, s2)  # noqa: E731
        val, _ = integrate.quad(f, 0.0, np.inf, epsabs=1e-13, epsrel=1e-12, limit=500)
        return 2.0 * val

    mass, m2, m4 = integral(0), integral(2), integral(4)
    return CNLQuadratureMoments(mass=mass, variance=m2 / mass,
                                excess_kurtosis=m4 * mass / m2**2 - 3.0)


def student_t_density(x, p: PrecisionPrior):
    """Normal mixed over a Gamma(alpha, rate=beta) precision.

    ``Gamma(a + 1/2) / (Gamma(a) sqrt(2 beta pi)) * (1 + x^2 / (2 beta))^-(a + 1/2)``,
    a Student-t with ``2 alpha`` degrees of freedom.
    """
    a, b = p.alpha, p.beta
    x = np.asarray(x, dtype=float)
    log_c = special.gammaln(a + 0.5) - special.gammaln(a) - 0.5 * math.log(2.0 * b * math.pi)
    out = np.exp(log_c - (a + 0.5) * np.log1p(x * x / (2.0 * b)))
    return out if out.ndim else float(out)


def _upper_gamma_cf(a: float, z: float, eps: float = 1e-15, max_iter: int = 10_000) -> float:
    """``h`` with ``Gamma(a, z) = e^{-z} z^a h`` (modified Lentz), for ``z > a + 1``."""
    tiny = 1e-300
    b = z + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, max_iter + 1):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise ArithmeticError(f"incomplete gamma continued fraction did not converge (a={a}, z={z})")


def failure_rate_gamma(x, shape: float, scale: float):
    """Gamma hazard ``e^{-x/b} (x/b)^{a-1} / (b Gamma(a, x/b))``.

    Near the bulk the ratio is formed in log space from the regularised
    upper incomplete gamma.  Beyond ``x/b > a + 1`` the exponential and
    power factors are cancelled analytically against a continued fraction
    for ``Gamma(a, z)``, so the far tail never underflows and tends to the
    asymptotic rate ``1 / scale``.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("failure rate is defined for x > 0")
    if shape <= 0 or scale <= 0:
        raise ValueError(f"shape and scale must be positive, got {shape}, {scale}")
    z = x / scale
    out = np.empty_like(z)
    far = z > shape + 1.0
    if np.any(far):
        out[far] = [1.0 / (scale * zi * _upper_gamma_cf(shape, zi)) for zi in z[far]]
    near = ~far
    if np.any(near):
        zn = z[near]
        log_upper = np.log(special.gammaincc(shape, zn)) + special.gammaln(shape)
        out[near] = np.exp(-zn + (shape - 1.0) * np.log(zn) - math.log(scale) - log_upper)
    return out if out.ndim else float(out)


def failure_rate_lognormal(x, mu: float = 0.0, sigma: float = 1.0):
    """Lognormal hazard ``sqrt(2/pi) e^{-(log x - mu)^2 / (2 sigma^2)} / (sigma x erfc(...))``.

    For ``log x > mu`` the Gaussian factor is cancelled analytically against
    the scaled ``erfcx``, which keeps the far tail free of underflow.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("failure rate is defined for x > 0")
    z = (np.log(x) - mu) / (math.sqrt(2.0) * sigma)
    pref = math.sqrt(2.0 / math.pi) / (sigma * x)
    upper = pref / special.erfcx(np.maximum(z, 0.0))
    lower = pref * np.exp(-z * z) / special.erfc(np.minimum(z, 0.0))
    out = np.where(z >= 0, upper, lower)
    return out if out.ndim else float(out)


def gamma_log_sf(x, shape: float, scale: float):
    """``log P(X > x)`` for a Gamma law, finite far past where ``sf`` underflows."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("survival is evaluated for x > 0")
    z = x / scale
    out = np.empty_like(z)
    far = z > shape + 1.0
    if np.any(far):
        zf = z[far]
        h = np.array([_upper_gamma_cf(shape, zi) for zi in zf])
        out[far] = -zf + shape * np.log(zf) + np.log(h) - special.gammaln(shape)
    near = ~far
    out[near] = np.log(special.gammaincc(shape, z[near]))
    return out if out.ndim else float(out)


def log_survival_ratio(prior: PrecisionPrior, x):
    """``log`` of Lognormal over matched Gamma survival at ``x``."""
    x = np.asarray(x, dtype=float)
    log_ln = stats.norm.logsf(np.log(x) / math.sqrt(prior.s2))
    return log_ln - gamma_log_sf(x, prior.alpha, 1.0 / prior.beta)


def lomax_from(prior: PrecisionPrior) -> tuple[float, float]:
    """Exponential with a Gamma(alpha, rate=beta) intensity is Lomax(alpha, beta)."""
    return prior.alpha, prior.beta


def lomax_pdf(x, shape: float, scale: float):
    x = np.asarray(x, dtype=float)
    return shape / scale * (1.0 + x / scale) ** (-shape - 1.0)


def lomax_sf(x, shape: float, scale: float):
    x = np.asarray(x, dtype=float)
    return (1.0 + x / scale) ** (-shape)


def negbin_from(prior: PrecisionPrior) -> tuple[float, float]:
    """Poisson with a Gamma(alpha, rate=beta) intensity is NegBin(r=alpha, p=beta/(1+beta))."""
    return prior.alpha, prior.beta / (1.0 + prior.beta)


def negbin_pmf(k, r: float, p: float):
    return stats.nbinom.pmf(k, r, p)


def gamma_prior(alpha: float, beta: float) -> PrecisionPrior:
    """Plain Gamma(alpha, rate=beta) prior, not tied to a Lognormal."""
    if alpha <= 0 or beta <= 0:
        raise ValueError(f"alpha and beta must be positive, got {alpha}, {beta}")
    return PrecisionPrior(s2=math.log1p(1.0 / alpha), alpha=float(alpha), beta=float(beta))


def failure_rate_grid(prior: PrecisionPrior, x: Sequence[float]) -> np.ndarray:
    """Columns ``x, r_gamma, r_lognormal`` for the matched pair in ``prior``."""
    x = np.asarray(x, dtype=float)
    rg = failure_rate_gamma(x, prior.alpha, 1.0 / prior.beta)
    rl = failure_rate_lognormal(x, 0.0, math.sqrt(prior.s2))
    return np.column_stack([x, rg, rl])
