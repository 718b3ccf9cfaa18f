"""Revenue-optimal prices for probit-type demand.

For demand ``q(p) = Phi(b p + c)`` with ``b < 0`` the revenue ``p q(p)`` is
maximised where ``p = -Phi(bp + c) / (b phi(bp + c))``. Writing the Gaussian
virtual valuation ``vv(v) = v - Phi(-v)/phi(v)`` this becomes the closed form

    p* = -(vv^{-1}(-c) + c) / b.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import BracketError, ConfigurationError, DomainError, NumericError
from .numerics import (
    GAUSSIAN,
    INV_SQRT_2PI,
    ConvolvedNoise,
    NoiseFamily,
    dist_cdf,
    find_root_monotone,
    hazard_ratio,
    mills_ratio,
    solve_index,
)

FIXED_POINT_TOL = 1e-8
INVERSE_TOL = 1e-10


def virtual_valuation(v):
    """``v - Phi(-v) / phi(v)``; strictly increasing."""
    return v - mills_ratio(v)


def _vv_prime(v):
    return 2.0 - v * mills_ratio(v)


def _newton_inverse(y: np.ndarray, tol: float, steps: int = 8):
    """Unguarded Newton from a smooth initial guess; ``None`` unless every
    entry converges, in which case the bracketed solver takes over."""
    if y.size == 0 or np.any(np.abs(y) > 20.0):
        return None
    v = np.where(y >= 0, y + 0.7518 * np.exp(-0.5 * y), 0.7518 + 0.5 * y)
    with np.errstate(all="ignore"):
        for _ in range(steps):
            r = virtual_valuation(v) - y
            if np.all(np.abs(r) <= tol):
                return v - r / _vv_prime(v)
            v = v - r / _vv_prime(v)
    return None


def virtual_valuation_inverse(y, tol: float = INVERSE_TOL):
    """Solve ``virtual_valuation(v) = y`` (vectorised over ``y``)."""
    y_arr = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y_arr)):
        raise DomainError("virtual valuation target must be finite")
    v = _newton_inverse(y_arr, tol)
    if v is not None:
        return float(v) if np.ndim(y) == 0 else v
    # vv(v) < v everywhere and vv(v) >= v - R(2) for v >= 2, so this brackets
    # the lower end stays above -37, where the Mills ratio would overflow
    lo = np.maximum(np.minimum(y_arr, 0.0) - 1.0, -37.0)
    hi = np.maximum(y_arr, 0.0) + 2.0
    for _ in range(100):
        bad_lo = virtual_valuation(lo) > y_arr
        bad_hi = virtual_valuation(hi) < y_arr
        if not (np.any(bad_lo) or np.any(bad_hi)):
            break
        lo = np.where(bad_lo, np.maximum(lo - (hi - lo), -37.0), lo)
        hi = np.where(bad_hi, hi + (hi - lo), hi)
    else:
        raise NumericError("virtual valuation bracket did not close after 100 doublings")
    v = find_root_monotone(
        lambda v: virtual_valuation(v) - y_arr, lo, hi, tol=tol, fprime=_vv_prime
    )
    # polish: a final Newton step drives the residual to rounding level
    v = v - (virtual_valuation(v) - y_arr) / _vv_prime(v)
    return float(v) if np.ndim(y) == 0 else v


VV_INV_ZERO = float(virtual_valuation_inverse(0.0, tol=1e-15))


@dataclass
class PriceDiagnostics:
    floored: int = 0


def optimal_price_marginal(b, m, x, diagnostics: Optional[PriceDiagnostics] = None):
    """Closed-form optimal price for ``q(p) = Phi(b p + x'm)``.

    ``b`` may be a vector of segments with ``m`` and ``x`` stacked row-wise.
    Negative raw prices are floored at zero and counted in ``diagnostics``.
    """
    b_arr = np.asarray(b, dtype=float)
    if np.any(b_arr >= 0):
        raise DomainError("price sensitivity must be negative")
    c = np.sum(np.asarray(m, dtype=float) * np.asarray(x, dtype=float), axis=-1)
    p = -(virtual_valuation_inverse(-c) + c) / b_arr
    neg = p < 0
    if np.any(neg):
        if diagnostics is not None:
            diagnostics.floored += int(np.sum(neg))
        p = np.maximum(p, 0.0)
    return float(p) if np.ndim(p) == 0 else p


def fixed_point_residual(p, b, c):
    """Residual of ``p = -(1/b) Phi(bp + c)/phi(bp + c)``."""
    u = b * p + c
    return p + mills_ratio(-u) / b


def _index_monotone(fam: NoiseFamily) -> bool:
    return fam.family in ("gaussian", "laplace")


def _revenue_conditional(p, alpha, model, xm):
    return p * dist_cdf(model.noise, (alpha + model.beta * p + xm) / model.sigma)


def oracle_price_conditional(alpha: float, model, x, grid_size: int = 10_000):
    """Revenue-maximising price when ``alpha`` and all parameters are known.

    ``model`` supplies ``beta``, ``mu``, ``sigma`` and ``noise`` (a
    :class:`~sarpricing.demand.TrueParameters` snapshot, for instance).

    Solves the first-order condition ``p = -(sigma/beta) F(u)/f(u)`` with
    ``u = (alpha + beta p + x'mu)/sigma``. For families whose index function
    is not guaranteed monotone (Student's t) a revenue grid arbitrates between
    multiple stationary points.
    """
    beta, sigma = float(model.beta), float(model.sigma)
    if beta >= 0:
        raise DomainError("price sensitivity must be negative")
    xm = float(np.dot(np.asarray(x, dtype=float), np.asarray(model.mu, dtype=float)))
    fam = model.noise
    k = -beta / sigma

    def foc(p):
        u = (alpha + beta * p + xm) / sigma
        return p * k - 1.0 / hazard_ratio(fam, u)

    hi = 1.0
    for _ in range(100):
        if foc(hi) > 0:
            break
        hi *= 2.0
    else:
        raise BracketError(f"no sign change of the first-order condition up to p={hi}")
    if _index_monotone(fam):
        return find_root_monotone(foc, 0.0, hi, tol=1e-14)

    grid = np.linspace(0.0, hi, grid_size)
    rev = _revenue_conditional(grid, alpha, model, xm)
    j = int(np.argmax(rev))
    lo_g, hi_g = grid[max(j - 1, 0)], grid[min(j + 1, grid_size - 1)]
    if foc(lo_g) * foc(hi_g) > 0:
        return float(grid[j])
    return find_root_monotone(foc, lo_g, hi_g, tol=1e-14)


@dataclass(frozen=True)
class PriceBounds:
    """Price cap for parameters in the declared bounds.

    ``M`` uses the exact zero of the virtual valuation; ``M_as_printed``
    keeps the ``-0.5 phi(0)`` term of the published bound for comparison.
    """

    M: float
    M_as_printed: float
    c_V: float
    C_V: float
    c_beta: float
    C_beta: float
    C_mu: float


def price_cap(c_beta: float, C_beta: float, C_mu: float, tau: float, sigma: float, epsilon: float) -> PriceBounds:
    if not (c_beta > 0 and C_beta >= c_beta and C_mu > 0 and sigma > 0 and tau >= 0):
        raise ConfigurationError("price-cap inputs must be positive with c_beta <= C_beta")
    if not 0 < epsilon <= 1:
        raise ConfigurationError(f"epsilon must lie in (0, 1], got {epsilon}")
    c_V = math.sqrt(tau**2 + sigma**2)
    C_V = math.sqrt(tau**2 / epsilon**2 + sigma**2)
    M = C_V * (C_mu / c_V + VV_INV_ZERO) / c_beta
    M_printed = C_V * (C_mu / c_V - 0.5 * INV_SQRT_2PI) / c_beta
    return PriceBounds(M, M_printed, c_V, C_V, c_beta, C_beta, C_mu)


def bayes_oracle_prices(beta, xm, sigma: float, noise: ConvolvedNoise):
    """Optimal prices when the preference shock is integrated out.

    Demand is ``H((beta p + x'mu)/sigma)`` with ``H`` the law of ``noise``;
    ``beta`` and ``xm`` broadcast. Returns prices and the optimal index.
    """
    beta = np.asarray(beta, dtype=float)
    if np.any(beta >= 0):
        raise DomainError("price sensitivity must be negative")
    c = np.asarray(xm, dtype=float) / sigma
    if noise.fam.family == "gaussian":
        s = math.sqrt(1.0 + noise.kappa**2)
        w = -virtual_valuation_inverse(-c / s)
        u = s * w
    else:
        u = solve_index(noise, c)
    p = sigma * (c - u) / (-beta)
    return p, u


def revenue_marginal(p, beta, xm, sigma: float, noise: ConvolvedNoise):
    """Expected revenue per arrival ``p H((beta p + x'mu)/sigma)``."""
    return p * noise.cdf((beta * p + xm) / sigma)


def conditional_oracle_prices(alpha, beta, xm, sigma: float, fam: NoiseFamily = GAUSSIAN):
    """Vectorised conditional oracle prices.

    ``alpha``, ``beta`` and ``xm`` (the covariate term ``x'mu``) broadcast.
    With ``c = (alpha + xm)/sigma`` the optimal index ``u`` solves
    ``u + F(u)/f(u) = c`` and ``p = sigma (c - u) / |beta|``.
    """
    beta = np.asarray(beta, dtype=float)
    if np.any(beta >= 0):
        raise DomainError("price sensitivity must be negative")
    c = (np.asarray(alpha, dtype=float) + np.asarray(xm, dtype=float)) / sigma
    if fam.family == "gaussian":
        u = -virtual_valuation_inverse(-c)
    else:
        u = solve_index(ConvolvedNoise(fam, 0.0), c)
    return sigma * (c - u) / (-beta)
