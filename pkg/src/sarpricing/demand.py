"""Ground-truth demand environment.

Each round every segment ``l`` sees ``n_lt`` arrivals, a covariate vector
``x_lt`` and a posted price ``p_lt``; each arrival buys with probability

    q_lt = F((alpha_lt + beta_t p_lt + x_lt' mu_t) / sigma)

where ``alpha_t`` is a fresh draw from the SAR prior and ``(beta_t, mu_t,
rho_t)`` drift slowly over time.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigurationError
from .network import NetworkStructure, SarPrior, validate_sar
from .numerics import GAUSSIAN, NoiseFamily, dist_cdf

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DriftSpec:
    """Per-round parameter change of norm ``magnitude * t**(-exponent)``."""

    exponent: float = math.inf
    magnitude: float = 0.1
    applies_to: str = "beta"

    def __post_init__(self):
        if not self.exponent > 0:
            raise ConfigurationError(f"drift exponent must be positive, got {self.exponent}")
        if self.magnitude < 0:
            raise ConfigurationError("drift magnitude must be nonnegative")
        if self.applies_to not in ("beta", "mu", "rho"):
            raise ConfigurationError(f"unknown drift target {self.applies_to!r}")

    def step_size(self, t: int) -> float:
        if math.isinf(self.exponent):
            return 0.0
        return self.magnitude * float(t) ** (-self.exponent)


def _direction(z: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(z)
    if norm == 0:
        return np.zeros_like(z)
    return z / norm


def drift_step(current, t: int, spec: DriftSpec, rng: np.random.Generator):
    """``current + magnitude t^-b Z/|Z|`` with ``Z`` standard normal.

    A scalar moves by exactly ``+-magnitude t^-b``. The normal draw is taken
    even when ``b`` is infinite so that random streams stay aligned across
    drift settings.
    """
    if t < 1:
        raise ConfigurationError("rounds are numbered from 1")
    cur = np.asarray(current, dtype=float)
    z = rng.standard_normal(cur.shape or (1,))
    step = spec.step_size(t) * _direction(z)
    out = cur + (step if cur.ndim else step[0])
    return float(out) if np.ndim(current) == 0 else out


@dataclass(frozen=True)
class ParameterBounds:
    c_beta: float = 0.1
    C_beta: float = 2.0
    C_mu: float = 1.0

    def __post_init__(self):
        if not (0 < self.c_beta <= self.C_beta and self.C_mu > 0):
            raise ConfigurationError("need 0 < c_beta <= C_beta and C_mu > 0")

    def project_beta(self, beta: float) -> float:
        return float(min(max(beta, -self.C_beta), -self.c_beta))

    def project_mu(self, mu: np.ndarray) -> np.ndarray:
        norm = np.linalg.norm(mu)
        return mu if norm <= self.C_mu else mu * (self.C_mu / norm)


@dataclass(frozen=True)
class TrueParameters:
    """Snapshot of the true model at one round."""

    beta: float
    mu: np.ndarray
    rho: float = 0.0
    tau: float = 1.0
    sigma: float = 1.0
    noise: NoiseFamily = GAUSSIAN
    bounds: ParameterBounds = field(default_factory=ParameterBounds)

    def check(self, network: Optional[NetworkStructure] = None, epsilon: float = 0.05) -> None:
        b = self.bounds
        if not b.c_beta - 1e-12 <= -self.beta <= b.C_beta + 1e-12:
            raise ConfigurationError(f"beta={self.beta} outside [-{b.C_beta}, -{b.c_beta}]")
        if np.linalg.norm(self.mu) > b.C_mu + 1e-12:
            raise ConfigurationError("|mu| exceeds C_mu")
        if network is not None and not validate_sar(network, self.rho, self.tau, epsilon):
            raise ConfigurationError(f"rho={self.rho} infeasible for the network")


def purchase_prob_conditional(alpha, params: TrueParameters, x, p):
    """``F((alpha + beta p + x'mu)/sigma)`` under the true noise family."""
    xm = np.sum(np.asarray(x, dtype=float) * np.asarray(params.mu, dtype=float), axis=-1)
    u = (np.asarray(alpha, dtype=float) + params.beta * np.asarray(p, dtype=float) + xm) / params.sigma
    return dist_cdf(params.noise, u)


def purchase_prob_marginal(b, m, x, p):
    """Working-model purchase probability ``Phi(b p + x'm)``."""
    xm = np.sum(np.asarray(x, dtype=float) * np.asarray(m, dtype=float), axis=-1)
    return dist_cdf(GAUSSIAN, np.asarray(b, dtype=float) * np.asarray(p, dtype=float) + xm)


def sample_demand(n, q, rng: np.random.Generator):
    """Binomial sales count."""
    return rng.binomial(n, np.clip(q, 0.0, 1.0))


def expected_revenue(n, p, q):
    return np.asarray(n) * np.asarray(p) * np.asarray(q) if np.ndim(p) else n * p * q


# --- arrival plans --------------------------------------------------------

def allocate_arrivals(total: int, weights: Sequence[float]) -> np.ndarray:
    """Split ``total`` arrivals proportionally to ``weights`` (largest remainder)."""
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or w.sum() <= 0:
        raise ConfigurationError("arrival weights must be nonnegative with a positive sum")
    raw = total * w / w.sum()
    n = np.floor(raw).astype(int)
    short = total - n.sum()
    if short > 0:
        order = np.argsort(-(raw - n), kind="stable")
        n[order[:short]] += 1
    return n


def imbalanced_weights(base: Sequence[float], share: float, groups: Optional[np.ndarray] = None) -> np.ndarray:
    """Reweight ``base`` so the first group carries ``share`` of all arrivals.

    ``groups`` is a boolean mask of the first group; by default segments
    alternate between the groups.
    """
    base = np.asarray(base, dtype=float)
    if groups is None:
        groups = np.arange(base.size) % 2 == 0
    if not 0 < share < 1:
        raise ConfigurationError("group share must lie in (0, 1)")
    w = np.empty_like(base)
    w[groups] = share * base[groups] / base[groups].sum()
    w[~groups] = (1 - share) * base[~groups] / base[~groups].sum()
    return w


# --- environment ----------------------------------------------------------

@dataclass(frozen=True)
class RoundEnvironment:
    t: int
    alpha: np.ndarray
    x: np.ndarray
    n: np.ndarray
    params: TrueParameters


@dataclass
class EnvironmentTrajectory:
    """Arrays for rounds ``1..T`` (row ``t-1`` holds round ``t``)."""

    beta: np.ndarray
    mu: np.ndarray
    rho: np.ndarray
    alpha: np.ndarray
    x: np.ndarray
    n: np.ndarray
    drift_totals: dict

    @property
    def horizon(self) -> int:
        return self.beta.shape[0]

    def round(self, t: int, template: TrueParameters) -> RoundEnvironment:
        i = t - 1
        params = TrueParameters(
            float(self.beta[i]), self.mu[i].copy(), float(self.rho[i]),
            template.tau, template.sigma, template.noise, template.bounds,
        )
        return RoundEnvironment(t, self.alpha[i], self.x[i], self.n[i], params)


class EnvironmentState:
    """Ground-truth state of one replication.

    Randomness comes from three child streams of ``rng`` (parameter drift,
    preference draws, covariates) so a bulk :meth:`rollout` and repeated
    :meth:`advance` calls produce bitwise-identical rounds.
    """

    def __init__(
        self,
        network: NetworkStructure,
        initial: TrueParameters,
        arrivals: np.ndarray,
        rng: np.random.Generator,
        drift: Sequence[DriftSpec] = (),
        epsilon: float = 0.05,
        freeze_covariates: bool = False,
    ):
        initial.check(network, epsilon)
        self.network = network
        self.epsilon = epsilon
        self.template = initial
        self.beta = float(initial.beta)
        self.mu = np.array(initial.mu, dtype=float)
        self.rho = float(initial.rho)
        self.arrivals = np.asarray(arrivals, dtype=np.int64)
        if self.arrivals.shape != (network.size,):
            raise ConfigurationError("one arrival count per segment required")
        specs = {d.applies_to: d for d in drift}
        self.drift = {k: specs.get(k, DriftSpec(math.inf, 0.0, k)) for k in ("beta", "mu", "rho")}
        self.freeze_covariates = freeze_covariates
        self._drift_rng, self._alpha_rng, self._x_rng = rng.spawn(3)
        self._frozen_x = None
        self._priors: dict[float, SarPrior] = {}
        self.t = 0
        self.drift_totals = {"beta": 0.0, "mu": 0.0, "rho": 0.0,
                             "sqrt_t_beta": 0.0, "sqrt_t_mu": 0.0, "sqrt_t_rho": 0.0,
                             "rho_rejections": 0}

    @property
    def dim(self) -> int:
        return self.mu.size

    def prior(self, rho: float) -> SarPrior:
        pr = self._priors.get(rho)
        if pr is None:
            pr = validate_sar(self.network, rho, self.template.tau, self.epsilon)
            if not pr:
                raise ConfigurationError(pr.message)
            self._priors[rho] = pr
        return pr

    def _covariates(self, raw: np.ndarray) -> np.ndarray:
        norms = np.linalg.norm(raw, axis=-1, keepdims=True)
        return raw / np.maximum(1.0, norms)

    def _apply_drift(self, t: int, z_beta: float, z_mu: np.ndarray, z_rho: float) -> None:
        """Move the parameters from round ``t`` to ``t + 1``."""
        b = self.template.bounds
        new_beta = b.project_beta(self.beta + self.drift["beta"].step_size(t) * np.sign(z_beta))
        new_mu = b.project_mu(self.mu + self.drift["mu"].step_size(t) * _direction(z_mu))
        new_rho = self.rho + self.drift["rho"].step_size(t) * np.sign(z_rho)
        new_rho = max(new_rho, 0.0)
        if new_rho != self.rho and not validate_sar(self.network, new_rho, self.template.tau, self.epsilon):
            log.info("round %d: rho step to %.6g rejected, holding %.6g", t, new_rho, self.rho)
            self.drift_totals["rho_rejections"] += 1
            new_rho = self.rho
        db, dm, dr = abs(new_beta - self.beta), float(np.linalg.norm(new_mu - self.mu)), abs(new_rho - self.rho)
        tot = self.drift_totals
        tot["beta"] += db
        tot["mu"] += dm
        tot["rho"] += dr
        st = math.sqrt(t)
        tot["sqrt_t_beta"] += st * db
        tot["sqrt_t_mu"] += st * dm
        tot["sqrt_t_rho"] += st * dr
        self.beta, self.mu, self.rho = new_beta, new_mu, new_rho

    def _draw_drift(self, count: int) -> np.ndarray:
        return self._drift_rng.standard_normal((count, 2 + self.dim))

    def advance(self) -> RoundEnvironment:
        """Generate the next round."""
        if self.t > 0:
            z = self._draw_drift(1)[0]
            self._apply_drift(self.t, z[0], z[1:-1], z[-1])
        self.t += 1
        L = self.network.size
        eps = self._alpha_rng.standard_normal(L)
        alpha = self.template.tau * self.prior(self.rho).solve(eps)
        x = self._next_x(1)[0]
        params = TrueParameters(self.beta, self.mu.copy(), self.rho, self.template.tau,
                                self.template.sigma, self.template.noise, self.template.bounds)
        return RoundEnvironment(self.t, alpha, x, self.arrivals.copy(), params)

    def _next_x(self, count: int) -> np.ndarray:
        L, d = self.network.size, self.dim
        if self.freeze_covariates:
            if self._frozen_x is None:
                self._frozen_x = self._covariates(self._x_rng.standard_exponential((L, d)))
            return np.broadcast_to(self._frozen_x, (count, L, d)).copy()
        return self._covariates(self._x_rng.standard_exponential((count, L, d)))

    def rollout(self, T: int) -> EnvironmentTrajectory:
        """Generate the next ``T`` rounds as arrays."""
        L, d = self.network.size, self.dim
        beta = np.empty(T)
        mu = np.empty((T, d))
        rho = np.empty(T)
        steps = T if self.t > 0 else T - 1
        z = self._draw_drift(steps) if steps > 0 else np.empty((0, 2 + d))
        k = 0
        for i in range(T):
            if self.t > 0:
                zi = z[k]
                k += 1
                self._apply_drift(self.t, zi[0], zi[1:-1], zi[-1])
            self.t += 1
            beta[i], mu[i], rho[i] = self.beta, self.mu, self.rho
        eps = self._alpha_rng.standard_normal((T, L))
        alpha = np.empty((T, L))
        for r in np.unique(rho):
            rows = rho == r
            alpha[rows] = self.template.tau * self.prior(float(r)).solve(eps[rows].T).T
        x = self._next_x(T)
        n = np.broadcast_to(self.arrivals, (T, L)).copy()
        return EnvironmentTrajectory(beta, mu, rho, alpha, x, n, dict(self.drift_totals))


def advance_environment(state: EnvironmentState, rng=None) -> RoundEnvironment:
    """Functional alias for :meth:`EnvironmentState.advance`.

    The state owns its random streams; ``rng`` is accepted for interface
    symmetry and ignored.
    """
    return state.advance()
