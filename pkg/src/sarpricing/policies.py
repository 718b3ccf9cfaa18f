"""Pricing policies.

``PsgdPolicy`` keeps a per-segment estimate ``(b_l, m_l)`` of the
variance-normalised demand model ``Phi(b p + x'm)`` and updates it by
projected stochastic gradient descent on the binomial negative
log-likelihood. ``UnshrunkenPolicy`` fits the conditional model with a free
intercept per segment and shared ``(beta, mu)``, ignoring the network.
``OraclePolicy`` posts the clairvoyant price.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigurationError
from .numerics import GAUSSIAN, INV_SQRT_2PI, ConvolvedNoise, NoiseFamily, hazard_ratio, log_cdf, solve_index
from .pricing import (
    PriceDiagnostics,
    bayes_oracle_prices,
    optimal_price_marginal,
    oracle_price_conditional,
    virtual_valuation_inverse,
)

TAIL = 7.0


def project_interval(v, lo: float, hi: float):
    return np.clip(v, lo, hi)


def project_ball(v: np.ndarray, radius: float) -> np.ndarray:
    """Radial projection of each row of ``v`` onto the ball of ``radius``."""
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    scale = np.where(norms > radius, radius / np.maximum(norms, 1e-300), 1.0)
    return v * scale


def binomial_score(y, n, u, fam: NoiseFamily = GAUSSIAN):
    """Derivative of ``-y log F(u) - (n-y) log F(-u)`` with respect to ``u``."""
    y = np.asarray(y, dtype=float)
    n = np.asarray(n, dtype=float)
    return -y * hazard_ratio(fam, u) + (n - y) * hazard_ratio(fam, -np.asarray(u, dtype=float))


def binomial_loss(y, n, u, fam: NoiseFamily = GAUSSIAN):
    y = np.asarray(y, dtype=float)
    return -y * log_cdf(fam, u) - (np.asarray(n) - y) * log_cdf(fam, -np.asarray(u, dtype=float))


@dataclass
class Diagnostics:
    floored_prices: int = 0
    tail_evaluations: int = 0
    projections_b: int = 0
    projections_m: int = 0


@dataclass
class PsgdState:
    b: np.ndarray
    m: np.ndarray
    b_lo: float
    b_hi: float
    m_radius: float
    eta0: float
    init_price: float = 1.0
    t: int = 0
    labels: Optional[Sequence[str]] = None
    working_noise: NoiseFamily = GAUSSIAN
    diagnostics: Diagnostics = field(default_factory=Diagnostics)

    @property
    def size(self) -> int:
        return self.b.size

    def is_feasible(self) -> bool:
        return bool(
            np.all(self.b >= self.b_lo - 1e-15)
            and np.all(self.b <= self.b_hi + 1e-15)
            and np.all(np.linalg.norm(self.m, axis=1) <= self.m_radius * (1 + 1e-12))
        )


@dataclass(frozen=True)
class PsgdConfig:
    """Feasible set and step-size rule of the PSGD policy.

    The feasible set rescales the true-parameter bounds by ``c_V``:
    ``b in [-C_beta/c_V, -c_beta/c_V]`` and ``|m| <= C_mu/c_V``.
    """

    segments: int
    dim: int
    c_beta: float = 0.1
    C_beta: float = 2.0
    C_mu: float = 1.0
    c_V: float = math.sqrt(2.0)
    eta0: float = 1.0
    init_price: float = 1.0
    init_b: Optional[Sequence[float]] = None
    init_m: Optional[Sequence[Sequence[float]]] = None
    working_noise: NoiseFamily = GAUSSIAN

    @property
    def b_interval(self) -> tuple[float, float]:
        return -self.C_beta / self.c_V, -self.c_beta / self.c_V

    @property
    def m_radius(self) -> float:
        return self.C_mu / self.c_V


def default_eta0(mean_arrivals: float) -> float:
    """``1 / (n_bar phi(0))`` keeps the step times gradient of order one."""
    return 1.0 / (mean_arrivals * INV_SQRT_2PI)


def psgd_init(config: PsgdConfig, labels: Optional[Sequence[str]] = None) -> PsgdState:
    lo, hi = config.b_interval
    if not lo < hi < 0:
        raise ConfigurationError(f"empty or non-negative b interval [{lo}, {hi}]")
    L, d = config.segments, config.dim
    if config.init_b is None:
        b = np.full(L, 0.5 * (lo + hi))
    else:
        b = np.array(config.init_b, dtype=float) * np.ones(L)
        if np.any(b < lo) or np.any(b > hi):
            raise ConfigurationError("initial b outside the feasible interval")
    if config.init_m is None:
        m = np.zeros((L, d))
    else:
        m = np.array(config.init_m, dtype=float) * np.ones((L, d))
        if np.any(np.linalg.norm(m, axis=1) > config.m_radius + 1e-12):
            raise ConfigurationError("initial m outside the feasible ball")
    if not config.eta0 > 0:
        raise ConfigurationError("eta0 must be positive")
    return PsgdState(b, m, lo, hi, config.m_radius, config.eta0, config.init_price,
                     labels=labels, working_noise=config.working_noise)


def psgd_gradients(state: PsgdState, y, n, x, p):
    """Gradients of every segment's loss at the current estimates.

    Returns ``(g_b, g_m)`` of shapes ``(L,)`` and ``(L, d)``; the loss
    derivative with respect to the index ``u = b p + x'm`` is multiplied by
    ``p`` for ``b`` and by ``x`` for ``m``.
    """
    p = np.asarray(p, dtype=float)
    x = np.asarray(x, dtype=float)
    u = state.b * p + np.sum(x * state.m, axis=-1)
    state.diagnostics.tail_evaluations += int(np.sum(np.abs(u) > TAIL))
    s = binomial_score(y, n, u, state.working_noise)
    return s * p, s[..., None] * x


def psgd_gradient(state: PsgdState, l: int, observation):
    """Gradient for segment ``l`` given ``(y, n, x, p)``."""
    y, n, x, p = observation
    if not 0 <= y <= n:
        raise ValueError("need 0 <= y <= n")
    x = np.asarray(x, dtype=float)
    u = state.b[l] * p + float(x @ state.m[l])
    if not np.isfinite(u):
        raise ValueError("non-finite index")
    s = float(binomial_score(y, n, u, state.working_noise))
    return s * p, s * x


def step_size(state: PsgdState, t: Optional[int] = None) -> float:
    t = state.t + 1 if t is None else t
    return state.eta0 / math.sqrt(t)


def psgd_update(state: PsgdState, y, n, x, p, eta: Optional[float] = None) -> PsgdState:
    """One projected gradient step for all segments (in place)."""
    if eta is None:
        eta = step_size(state)
    if not eta > 0:
        raise ValueError("step size must be positive")
    g_b, g_m = psgd_gradients(state, y, n, x, p)
    b = state.b - eta * g_b
    m = state.m - eta * g_m
    out_b = (b < state.b_lo) | (b > state.b_hi)
    state.diagnostics.projections_b += int(out_b.sum())
    state.b = project_interval(b, state.b_lo, state.b_hi)
    norms = np.linalg.norm(m, axis=1)
    state.diagnostics.projections_m += int((norms > state.m_radius).sum())
    state.m = project_ball(m, state.m_radius)
    state.t += 1
    return state


def _index_price(b, c, fam: NoiseFamily):
    if fam.family == "gaussian":
        return -(virtual_valuation_inverse(-c) + c) / b
    u = solve_index(ConvolvedNoise(fam, 0.0), c)
    return (c - u) / -b


def psgd_price(state: PsgdState, l=None, x=None, t: Optional[int] = None):
    """Price for round ``t`` (default: the next round).

    The first round posts the constant initial price; afterwards the price
    is the optimal price under the current estimates. With ``l=None`` all
    segments are priced and ``x`` has one row per segment.
    """
    t = state.t + 1 if t is None else t
    idx = slice(None) if l is None else l
    b = state.b[idx]
    if t == 1:
        return np.full(np.shape(b), state.init_price) if l is None else state.init_price
    x = np.asarray(x, dtype=float)
    if state.working_noise.family == "gaussian":
        diag = PriceDiagnostics()
        p = optimal_price_marginal(b, state.m[idx], x, diag)
        state.diagnostics.floored_prices += diag.floored
        return p
    c = np.sum(x * state.m[idx], axis=-1)
    p = _index_price(b, c, state.working_noise)
    return np.maximum(p, 0.0)


def state_to_json(state: PsgdState) -> str:
    labels = state.labels or [str(i) for i in range(state.size)]
    doc = {
        "policy": "psgd",
        "t": state.t,
        "segments": {lab: {"b": float(state.b[i]), "m": [float(v) for v in state.m[i]]}
                     for i, lab in enumerate(labels)},
    }
    return json.dumps(doc, indent=2, sort_keys=False)


def state_from_json(text: str, template: PsgdState) -> PsgdState:
    """Restore estimates from :func:`state_to_json` into a copy of ``template``."""
    doc = json.loads(text)
    labels = template.labels or [str(i) for i in range(template.size)]
    segs = doc["segments"]
    if set(segs) != set(labels):
        raise ConfigurationError("snapshot segments do not match the policy")
    b = np.array([segs[k]["b"] for k in labels], dtype=float)
    m = np.array([segs[k]["m"] for k in labels], dtype=float)
    if m.shape != template.m.shape:
        raise ConfigurationError("snapshot covariate dimension mismatch")
    new = PsgdState(b, m, template.b_lo, template.b_hi, template.m_radius, template.eta0,
                    template.init_price, int(doc.get("t", 0)), template.labels,
                    template.working_noise)
    if not new.is_feasible():
        raise ConfigurationError("snapshot estimates lie outside the feasible set")
    return new


# --- unshrunken baseline --------------------------------------------------

@dataclass
class UnshrunkenState:
    """Free intercept per segment, shared ``beta`` and ``mu``; ``sigma`` known."""

    alpha: np.ndarray
    beta: float
    mu: np.ndarray
    c_beta: float
    C_beta: float
    C_mu: float
    alpha_max: float
    sigma: float
    eta0: float
    init_price: float = 1.0
    t: int = 0
    diagnostics: Diagnostics = field(default_factory=Diagnostics)

    def is_feasible(self) -> bool:
        return bool(
            -self.C_beta <= self.beta <= -self.c_beta
            and np.linalg.norm(self.mu) <= self.C_mu * (1 + 1e-12)
            and np.all(np.abs(self.alpha) <= self.alpha_max)
        )


def unshrunken_init(segments: int, dim: int, c_beta: float = 0.1, C_beta: float = 2.0,
                    C_mu: float = 1.0, tau: float = 1.0, sigma: float = 1.0,
                    epsilon: float = 0.05, eta0: float = 1.0, init_price: float = 1.0,
                    alpha_max: Optional[float] = None) -> UnshrunkenState:
    if alpha_max is None:
        alpha_max = 6.0 * tau / epsilon
    return UnshrunkenState(np.zeros(segments), -0.5 * (c_beta + C_beta), np.zeros(dim),
                           c_beta, C_beta, C_mu, alpha_max, sigma, eta0, init_price)


def unshrunken_gradients(state: UnshrunkenState, y, n, x, p):
    """Gradients ``(g_alpha, g_beta, g_mu)`` of the summed conditional loss."""
    p = np.asarray(p, dtype=float)
    x = np.asarray(x, dtype=float)
    u = (state.alpha + state.beta * p + x @ state.mu) / state.sigma
    s = binomial_score(y, n, u) / state.sigma
    return s, float(np.sum(s * p)), s @ x


def unshrunken_update(state: UnshrunkenState, y, n, x, p, eta: Optional[float] = None) -> UnshrunkenState:
    """Projected SGD step; shared coordinates step ``eta / L``."""
    t = state.t + 1
    if eta is None:
        eta = state.eta0 / math.sqrt(t)
    g_a, g_b, g_mu = unshrunken_gradients(state, y, n, x, p)
    L = state.alpha.size
    state.alpha = np.clip(state.alpha - eta * g_a, -state.alpha_max, state.alpha_max)
    state.beta = float(np.clip(state.beta - eta / L * g_b, -state.C_beta, -state.c_beta))
    state.mu = project_ball((state.mu - eta / L * g_mu)[None, :], state.C_mu)[0]
    state.t = t
    return state


def unshrunken_price(state: UnshrunkenState, l=None, x=None, t: Optional[int] = None):
    """Optimal conditional price at the current estimates."""
    t = state.t + 1 if t is None else t
    idx = slice(None) if l is None else l
    alpha = state.alpha[idx]
    if t == 1:
        return np.full(np.shape(alpha), state.init_price) if l is None else state.init_price
    c = (alpha + np.asarray(x, dtype=float) @ state.mu) / state.sigma
    return state.sigma * (virtual_valuation_inverse(-c) + c) / -state.beta


# --- runner-facing wrappers -----------------------------------------------

class Policy:
    name = "policy"

    def prices(self, t: int, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def observe(self, t: int, y, n, x, p) -> None:
        pass


class PsgdPolicy(Policy):
    name = "psgd"

    def __init__(self, config: PsgdConfig, labels=None):
        self.state = psgd_init(config, labels)

    def prices(self, t, x):
        return psgd_price(self.state, None, x, t)

    def observe(self, t, y, n, x, p):
        psgd_update(self.state, y, n, x, p)


class UnshrunkenPolicy(Policy):
    name = "unshrunken"

    def __init__(self, state: UnshrunkenState):
        self.state = state

    def prices(self, t, x):
        return unshrunken_price(self.state, None, x, t)

    def observe(self, t, y, n, x, p):
        unshrunken_update(self.state, y, n, x, p)


class OraclePolicy(Policy):
    """Posts precomputed clairvoyant prices (row ``t-1`` for round ``t``)."""

    name = "oracle"

    def __init__(self, oracle_prices: np.ndarray):
        self.table = oracle_prices

    def prices(self, t, x):
        return self.table[t - 1]


def oracle_policy_price(environment, l: int, noise=None):
    """Clairvoyant price for segment ``l`` of a :class:`RoundEnvironment`.

    Without ``noise`` this is the conditional oracle that also knows
    ``alpha_lt``; passing the segment's integrated noise law gives the
    Bayes clairvoyant that knows the parameters but not the shock.
    """
    prm = environment.params
    if noise is None:
        return oracle_price_conditional(float(environment.alpha[l]), prm, environment.x[l])
    xm = float(environment.x[l] @ prm.mu)
    p, _ = bayes_oracle_prices(prm.beta, xm, prm.sigma, noise)
    return float(p)
