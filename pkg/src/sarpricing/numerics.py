"""Scalar probability primitives and a safeguarded monotone root finder.

Every function here accepts scalars or numpy arrays and is pure, so it is
safe to share across threads and worker processes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import special

from .errors import BracketError, ConfigurationError, DomainError

SQRT_HALF_PI = math.sqrt(math.pi / 2.0)
INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

FAMILIES = ("gaussian", "laplace", "student_t")


@dataclass(frozen=True)
class NoiseFamily:
    """A location-zero, symmetric noise law.

    ``gaussian`` and ``laplace`` have unit scale (the Laplace variance is
    therefore 2). ``student_t`` has unit scale and ``dof`` degrees of freedom.
    """

    family: str = "gaussian"
    dof: float = 4.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigurationError(f"unknown noise family {self.family!r}")
        if self.family == "student_t" and not self.dof > 2:
            raise ConfigurationError(
                f"student_t needs dof > 2 for a finite variance, got {self.dof}"
            )

    @classmethod
    def parse(cls, spec) -> "NoiseFamily":
        """Build from a family name, a ``{"family", "dof"}`` dict or an instance."""
        if isinstance(spec, NoiseFamily):
            return spec
        if isinstance(spec, str):
            return cls(spec)
        return cls(**spec)

    def to_dict(self) -> dict:
        if self.family == "student_t":
            return {"family": self.family, "dof": self.dof}
        return {"family": self.family}

    def cdf(self, v):
        return dist_cdf(self, v)

    def pdf(self, v):
        return dist_pdf(self, v)


GAUSSIAN = NoiseFamily("gaussian")


def _check_finite(v):
    arr = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError("argument must be finite")
    return arr


def _out(arr, like):
    return float(arr) if np.ndim(like) == 0 else arr


def dist_cdf(fam: NoiseFamily, v):
    """Cumulative distribution function of ``fam`` at ``v``."""
    x = _check_finite(v)
    if fam.family == "gaussian":
        out = special.ndtr(x)
    elif fam.family == "laplace":
        # both branches are evaluated; the exponent is sign-folded to avoid overflow
        e = 0.5 * np.exp(-np.abs(x))
        out = np.where(x < 0, e, 1.0 - e)
    else:
        out = special.stdtr(fam.dof, x)
    return _out(out, v)


def dist_pdf(fam: NoiseFamily, v):
    """Density of ``fam`` at ``v``."""
    x = _check_finite(v)
    if fam.family == "gaussian":
        out = INV_SQRT_2PI * np.exp(-0.5 * x * x)
    elif fam.family == "laplace":
        out = 0.5 * np.exp(-np.abs(x))
    else:
        nu = fam.dof
        logc = special.gammaln((nu + 1) / 2) - special.gammaln(nu / 2) - 0.5 * math.log(nu * math.pi)
        out = np.exp(logc - (nu + 1) / 2 * np.log1p(x * x / nu))
    return _out(out, v)


def mills_ratio(v):
    """Gaussian Mills ratio ``Phi(-v) / phi(v)``, accurate in both tails."""
    x = np.asarray(v, dtype=float)
    return _out(SQRT_HALF_PI * special.erfcx(x / math.sqrt(2.0)), v)


def hazard_ratio(fam: NoiseFamily, u):
    """``f(u) / F(u)`` without forming the possibly underflowing ``F(u)``."""
    x = np.asarray(u, dtype=float)
    if fam.family == "gaussian":
        out = 1.0 / (SQRT_HALF_PI * special.erfcx(-x / math.sqrt(2.0)))
    elif fam.family == "laplace":
        # F = e^u/2 for u < 0, so the ratio is exactly 1 there
        out = np.where(x < 0, 1.0, 1.0 / (2.0 * np.exp(np.minimum(x, 700.0)) - 1.0))
    else:
        out = dist_pdf(fam, x) / np.maximum(dist_cdf(fam, x), 1e-300)
    return _out(out, u)


def log_cdf(fam: NoiseFamily, u):
    x = np.asarray(u, dtype=float)
    if fam.family == "gaussian":
        out = special.log_ndtr(x)
    elif fam.family == "laplace":
        out = np.where(x < 0, x - math.log(2.0), np.log1p(-0.5 * np.exp(-np.abs(x))))
    else:
        out = np.log(np.maximum(special.stdtr(fam.dof, x), 1e-300))
    return _out(out, u)


def find_root_monotone(
    f: Callable,
    lo,
    hi,
    tol: float = 1e-12,
    fprime: Optional[Callable] = None,
    max_iter: int = 200,
):
    """Root of a continuous strictly monotone ``f`` on ``[lo, hi]``.

    Bisection with an optional Newton acceleration: a Newton step is taken
    whenever ``fprime`` is given and the step lands strictly inside the
    current bracket, otherwise the bracket is halved. ``f`` may be vectorised,
    in which case ``lo`` and ``hi`` broadcast against each other and every
    component is solved independently.

    Returns ``v`` with ``|f(v)| <= tol`` or a final bracket narrower than
    ``tol``.
    """
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")
    a, b = np.broadcast_arrays(np.asarray(lo, dtype=float), np.asarray(hi, dtype=float))
    fa = np.asarray(f(a), dtype=float)
    fb = np.asarray(f(b), dtype=float)
    shape = np.broadcast_shapes(a.shape, fa.shape, fb.shape)
    scalar = shape == ()
    a, b = np.broadcast_to(a, shape).astype(float), np.broadcast_to(b, shape).astype(float)
    fa, fb = np.broadcast_to(fa, shape).astype(float), np.broadcast_to(fb, shape).astype(float)
    if np.any(fa * fb > 0):
        raise BracketError("f(lo) and f(hi) have the same sign")
    # orient so that f(a) <= 0 <= f(b)
    flip = fa > 0
    a, b = np.where(flip, b, a), np.where(flip, a, b)
    fa, fb = np.where(flip, fb, fa), np.where(flip, fa, fb)

    x = np.where(np.abs(fa) <= np.abs(fb), a, b)
    fx = np.where(np.abs(fa) <= np.abs(fb), fa, fb)
    done = (np.abs(fx) <= tol) | (np.abs(b - a) <= tol)
    # a Newton step that fails to halve the residual forces a bisection next
    slow = np.zeros(shape, dtype=bool)
    for _ in range(max_iter):
        if np.all(done):
            break
        mid = 0.5 * (a + b)
        cand = mid
        if fprime is not None:
            d = np.asarray(fprime(x), dtype=float) * np.ones(shape)
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                newton = x - fx / d
            lo_, hi_ = np.minimum(a, b), np.maximum(a, b)
            ok = ~slow & np.isfinite(newton) & (newton > lo_) & (newton < hi_)
            cand = np.where(ok, newton, mid)
        cand = np.where(done, x, cand)
        fc = np.asarray(f(cand), dtype=float) * np.ones(shape)
        slow = np.abs(fc) > 0.5 * np.abs(fx)
        neg = fc <= 0
        a = np.where(~done & neg, cand, a)
        b = np.where(~done & ~neg, cand, b)
        x = np.where(done, x, cand)
        fx = np.where(done, fx, fc)
        done = done | (np.abs(fx) <= tol) | (np.abs(b - a) <= tol)
    if scalar:
        return float(x)
    return x


class ConvolvedNoise:
    """Law of ``kappa * N + Z`` with ``N`` standard normal and ``Z ~ fam``.

    This is the utility noise seen once a Gaussian preference shock of
    standard deviation ``kappa`` (in units of the idiosyncratic scale) is
    integrated out. Gaussian families convolve in closed form, Laplace via the
    normal-Laplace distribution, and Student's t through a cubic Hermite table
    built by adaptive quadrature.
    """

    _TABLE_SIZE = 4001

    def __init__(self, fam: NoiseFamily, kappa: float):
        if kappa < 0:
            raise ConfigurationError(f"kappa must be nonnegative, got {kappa}")
        self.fam = fam
        self.kappa = float(kappa)
        self._spline = None
        if fam.family == "student_t" and self.kappa > 0:
            self._spline = _student_table(fam.dof, self.kappa)

    def __repr__(self):
        return f"ConvolvedNoise({self.fam!r}, kappa={self.kappa:.6g})"

    def cdf(self, z):
        z = np.asarray(z, dtype=float)
        k = self.kappa
        if k == 0:
            return dist_cdf(self.fam, z) if z.ndim else float(dist_cdf(self.fam, z))
        if self.fam.family == "gaussian":
            return special.ndtr(z / math.sqrt(1.0 + k * k))
        if self.fam.family == "laplace":
            a, b = _normal_laplace_terms(z, k)
            return special.ndtr(z / k) - 0.5 * (a - b)
        zc = np.clip(z, self._spline.x[0], self._spline.x[-1])
        return np.clip(self._spline(zc), 0.0, 1.0)

    def pdf(self, z):
        z = np.asarray(z, dtype=float)
        k = self.kappa
        if k == 0:
            return dist_pdf(self.fam, z) if z.ndim else float(dist_pdf(self.fam, z))
        if self.fam.family == "gaussian":
            s = math.sqrt(1.0 + k * k)
            return INV_SQRT_2PI * np.exp(-0.5 * (z / s) ** 2) / s
        if self.fam.family == "laplace":
            a, b = _normal_laplace_terms(z, k)
            return 0.5 * (a + b)
        zc = np.clip(z, self._spline.x[0], self._spline.x[-1])
        return np.maximum(self._spline(zc, 1), 0.0)

    def ratio(self, z):
        """``F(z) / f(z)``, the reciprocal hazard of the lower tail."""
        z = np.asarray(z, dtype=float)
        if self.fam.family == "gaussian":
            s = math.sqrt(1.0 + self.kappa**2)
            return s * mills_ratio(-z / s)
        if self.kappa == 0:
            return 1.0 / hazard_ratio(self.fam, z)
        return self.cdf(z) / np.maximum(self.pdf(z), 1e-300)

    def index(self, z):
        """``z + F(z)/f(z)``; the optimal index solves ``index(z) = c``."""
        return z + self.ratio(z)


def _normal_laplace_terms(z, k):
    # phi(z/k) * R(k - z/k) and phi(z/k) * R(k + z/k), R the Mills ratio,
    # evaluated in log space so neither factor overflows
    w = z / k
    logphi = -0.5 * w * w - 0.5 * math.log(2 * math.pi)

    def term(arg):
        logphi_arg = -0.5 * arg * arg - 0.5 * math.log(2 * math.pi)
        return np.exp(logphi + special.log_ndtr(-arg) - logphi_arg)

    return term(k - w), term(k + w)


_STUDENT_CACHE: dict = {}


def _student_table(dof: float, kappa: float):
    from scipy.integrate import quad_vec
    from scipy.interpolate import CubicHermiteSpline

    key = (float(dof), round(float(kappa), 12))
    if key in _STUDENT_CACHE:
        return _STUDENT_CACHE[key]
    s = np.linspace(-4.4, 4.4, ConvolvedNoise._TABLE_SIZE)
    z = (2.0 + kappa) * np.sinh(s)
    fam = NoiseFamily("student_t", dof)

    # integrate over the Gaussian shock in standardised units
    def integrand(a):
        w = INV_SQRT_2PI * math.exp(-0.5 * a * a)
        arg = z - kappa * a
        return np.concatenate([special.stdtr(dof, arg), dist_pdf(fam, arg)]) * w

    vals, _ = quad_vec(integrand, -40.0, 40.0, epsabs=1e-13, epsrel=1e-11, points=(0.0,))
    H, h = vals[: z.size], vals[z.size :]
    spline = CubicHermiteSpline(z, H, h)
    _STUDENT_CACHE[key] = spline
    return spline


def solve_index(noise, c, tol: float = 1e-12):
    """Solve ``noise.index(z) = c`` for every entry of ``c``.

    ``index`` is increasing for log-concave laws; the bracket starts at
    ``[c - 1, c]`` (``index(z) >= z``) and the lower end doubles outward until
    it brackets the root.
    """
    c = np.asarray(c, dtype=float)
    hi = c.copy()
    step = np.ones_like(c)
    lo = c - step
    for _ in range(100):
        bad = noise.index(lo) > c
        if not np.any(bad):
            break
        step = np.where(bad, 2 * step, step)
        lo = np.where(bad, c - step, lo)
    else:
        raise BracketError("could not bracket the optimal index")
    out = find_root_monotone(lambda z: noise.index(z) - c, lo, hi, tol=tol)
    return out
