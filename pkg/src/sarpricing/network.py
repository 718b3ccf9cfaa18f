"""Segment networks and the spatial autoregressive (SAR) preference prior.

A network is a symmetric, nonnegative contiguity matrix ``W``. The prior on
the per-segment preference vector is

    alpha = rho * W @ alpha + tau * eps,   eps ~ N(0, I)

so ``alpha ~ N(0, tau^2 (I - rho W)^{-2})``.
"""

from __future__ import annotations

import csv
import io
import logging
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from scipy import linalg

from .errors import ConfigurationError, DegeneracyError, ShapeError

log = logging.getLogger(__name__)

DEFAULT_EPSILON = 0.05
_SYM_TOL = 1e-12


def spectral_bounds(W) -> tuple[float, float]:
    """Smallest and largest eigenvalue of a symmetric matrix."""
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {W.shape}")
    scale = max(1.0, float(np.abs(W).max(initial=0.0)))
    if not np.allclose(W, W.T, rtol=0.0, atol=_SYM_TOL * scale):
        raise ConfigurationError("matrix is not symmetric")
    ev = linalg.eigvalsh(0.5 * (W + W.T))
    return float(ev[0]), float(ev[-1])


@dataclass(frozen=True, eq=False)
class NetworkStructure:
    """Symmetric nonnegative ``L x L`` weights with cached spectral bounds."""

    W: np.ndarray
    labels: Optional[tuple] = None
    omega_min: float = field(init=False)
    omega_max: float = field(init=False)

    def __post_init__(self):
        W = np.array(self.W, dtype=float)
        if W.ndim != 2 or W.shape[0] != W.shape[1] or W.shape[0] < 1:
            raise ShapeError(f"W must be a non-empty square matrix, got {W.shape}")
        if np.any(W < 0):
            raise ConfigurationError("network weights must be nonnegative")
        lo, hi = spectral_bounds(W)
        W = 0.5 * (W + W.T)
        W.setflags(write=False)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "omega_min", lo)
        object.__setattr__(self, "omega_max", hi)
        if self.labels is None:
            object.__setattr__(self, "labels", tuple(str(i) for i in range(W.shape[0])))
        elif len(self.labels) != W.shape[0]:
            raise ShapeError("one label per segment required")
        if not self.psd_flag:
            log.debug("network is not PSD (omega_min=%.3g)", lo)

    @property
    def size(self) -> int:
        return self.W.shape[0]

    @property
    def psd_flag(self) -> bool:
        return self.omega_min >= -1e-10

    def degree(self) -> np.ndarray:
        """Row sums of ``W``, the connectivity score of each segment."""
        return self.W.sum(axis=1)

    def to_csv(self, path: Union[str, Path]) -> None:
        Path(path).write_text(network_to_csv_text(self), encoding="utf-8")

    @classmethod
    def from_csv(cls, path: Union[str, Path]) -> "NetworkStructure":
        return network_from_csv_text(Path(path).read_text(encoding="utf-8"))


def build_rbf_network(
    features,
    width: float,
    threshold: float = 0.0,
    labels: Optional[Sequence[str]] = None,
    self_loops: bool = False,
) -> NetworkStructure:
    """RBF similarity network ``w_ij = exp(-|f_i - f_j|^2 / (2 width^2))``.

    Weights below ``threshold`` are set to zero. The diagonal is zero unless
    ``self_loops`` is set, in which case the kernel's unit diagonal is kept and
    ``W`` is the (thresholded) kernel Gram matrix.
    """
    try:
        F = np.array([np.asarray(f, dtype=float) for f in features])
    except ValueError as exc:
        raise ShapeError("feature vectors must share one dimension") from exc
    if F.ndim != 2:
        raise ShapeError("feature vectors must share one dimension")
    if F.shape[0] < 2:
        raise ShapeError("a network needs at least two segments")
    if not width > 0:
        raise ConfigurationError(f"kernel width must be positive, got {width}")
    if not 0 <= threshold < 1:
        raise ConfigurationError(f"threshold must lie in [0, 1), got {threshold}")
    sq = np.sum(F * F, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * F @ F.T, 0.0)
    W = np.exp(-d2 / (2.0 * width * width))
    W[W < threshold] = 0.0
    np.fill_diagonal(W, 1.0 if self_loops else 0.0)
    W = 0.5 * (W + W.T)
    return NetworkStructure(W, labels=None if labels is None else tuple(labels))


@dataclass(frozen=True)
class SarRejection:
    """Why a ``(network, rho)`` pair fails the SAR feasibility bound."""

    rho: float
    bound: str
    message: str

    def __bool__(self):
        return False


@dataclass(frozen=True, eq=False)
class SarPrior:
    """Validated SAR prior; build it through :func:`validate_sar`."""

    network: NetworkStructure
    rho: float
    tau: float = 1.0
    epsilon: float = DEFAULT_EPSILON

    @cached_property
    def cholesky(self) -> np.ndarray:
        """Lower Cholesky factor of ``I - rho W``."""
        A = np.eye(self.network.size) - self.rho * self.network.W
        try:
            return linalg.cholesky(A, lower=True)
        except linalg.LinAlgError as exc:
            raise DegeneracyError(
                f"I - rho W is not positive definite at rho={self.rho}"
            ) from exc

    def solve(self, b: np.ndarray) -> np.ndarray:
        """``(I - rho W)^{-1} b`` for a vector or a column stack."""
        return linalg.cho_solve((self.cholesky, True), b)

    @cached_property
    def inverse(self) -> np.ndarray:
        return self.solve(np.eye(self.network.size))

    def covariance(self) -> np.ndarray:
        """``tau^2 (I - rho W)^{-2}``."""
        inv = self.inverse
        return self.tau**2 * inv @ inv

    def alpha_sd(self) -> np.ndarray:
        """Marginal prior standard deviation of each ``alpha_l``."""
        return self.tau * np.linalg.norm(self.inverse, axis=0)


def validate_sar(
    network: NetworkStructure,
    rho: float,
    tau: float = 1.0,
    epsilon: float = DEFAULT_EPSILON,
) -> Union[SarPrior, SarRejection]:
    """Accept ``rho`` iff ``0 <= rho`` and ``rho * omega_max <= 1 - epsilon``.

    Returns a :class:`SarPrior` on success and a falsy :class:`SarRejection`
    naming the violated bound otherwise; ``rho`` is never clamped.
    """
    if not 0 <= epsilon < 1:
        raise ConfigurationError(f"epsilon must lie in [0, 1), got {epsilon}")
    if tau < 0:
        raise ConfigurationError(f"tau must be nonnegative, got {tau}")
    if not np.isfinite(rho) or rho < 0:
        return SarRejection(rho, "nonnegativity", f"rho={rho} must be nonnegative")
    if rho * network.omega_max > 1 - epsilon + 1e-12:
        return SarRejection(
            rho,
            "spectral",
            f"rho*omega_max = {rho * network.omega_max:.6g} exceeds 1-epsilon = {1 - epsilon:.6g}",
        )
    return SarPrior(network, float(rho), float(tau), float(epsilon))


def rho_upper(network: NetworkStructure, epsilon: float = DEFAULT_EPSILON) -> float:
    """Largest feasible ``rho`` for ``network`` (infinite for an empty graph)."""
    if network.omega_max <= 0:
        return np.inf
    return (1 - epsilon) / network.omega_max


def sample_alpha(prior: SarPrior, rng: np.random.Generator, size: Optional[int] = None):
    """Draw ``tau (I - rho W)^{-1} eps`` with ``eps ~ N(0, I_L)``.

    With ``size`` given, returns a ``(size, L)`` array of independent draws.
    """
    L = prior.network.size
    if size is None:
        eps = rng.standard_normal(L)
        return prior.tau * prior.solve(eps)
    eps = rng.standard_normal((size, L))
    return prior.tau * prior.solve(eps.T).T


def marginal_variances(prior: SarPrior, sigma: float) -> np.ndarray:
    """Per-segment utility standard deviation ``V_l``.

    ``V_l^2 = tau^2 |(I - rho W)^{-1} e_l|^2 + sigma^2``.
    """
    if not sigma > 0:
        raise ConfigurationError(f"sigma must be positive, got {sigma}")
    return np.sqrt(prior.alpha_sd() ** 2 + sigma**2)


# --- CSV interfaces -------------------------------------------------------

def read_feature_csv(path_or_text, columns: Optional[Sequence[str]] = None):
    """Node features from CSV: header row, segment id first, real columns after.

    Returns ``(ids, matrix, column_names)``. ``columns`` selects a subset of the
    feature columns by name. Missing or non-numeric cells are rejected.
    """
    text = _read_text(path_or_text)
    rows = list(csv.reader(io.StringIO(text)))
    rows = [r for r in rows if r]
    if len(rows) < 2:
        raise ConfigurationError("feature CSV needs a header and at least one row")
    header = [h.strip() for h in rows[0]]
    names = header[1:]
    ids, data = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ConfigurationError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
        ids.append(row[0].strip())
        vals = []
        for cell in row[1:]:
            cell = cell.strip()
            if cell == "" or cell.lower() in ("na", "nan", "null"):
                raise ConfigurationError(f"line {lineno}: missing value")
            try:
                vals.append(float(cell))
            except ValueError as exc:
                raise ConfigurationError(f"line {lineno}: non-numeric value {cell!r}") from exc
        data.append(vals)
    X = np.array(data, dtype=float)
    if not np.all(np.isfinite(X)):
        raise ConfigurationError("feature CSV contains non-finite values")
    if columns is not None:
        missing = [c for c in columns if c not in names]
        if missing:
            raise ConfigurationError(f"unknown feature columns {missing}")
        idx = [names.index(c) for c in columns]
        X = X[:, idx]
        names = list(columns)
    return ids, X, names


def network_to_csv_text(net: NetworkStructure) -> str:
    buf = io.StringIO()
    buf.write(f"# sar-network L={net.size}\n")
    writer = csv.writer(buf, lineterminator="\n")
    for row in net.W:
        writer.writerow([repr(float(v)) for v in row])
    return buf.getvalue()


def network_from_csv_text(text: str) -> NetworkStructure:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# sar-network L="):
        raise ConfigurationError("network CSV must start with '# sar-network L=<L>'")
    try:
        L = int(lines[0].split("=", 1)[1])
    except ValueError as exc:
        raise ConfigurationError("malformed network header") from exc
    rows = [r for r in csv.reader(lines[1:]) if r]
    if len(rows) != L or any(len(r) != L for r in rows):
        raise ShapeError(f"expected a {L}x{L} matrix")
    W = np.array([[float(c) for c in r] for r in rows])
    return NetworkStructure(W)


def _read_text(path_or_text) -> str:
    if isinstance(path_or_text, Path):
        return path_or_text.read_text(encoding="utf-8")
    s = str(path_or_text)
    if "\n" not in s and Path(s).exists():
        return Path(s).read_text(encoding="utf-8")
    return s


def warn_if_not_psd(net: NetworkStructure) -> None:
    if not net.psd_flag:
        warnings.warn(
            f"network is not positive semidefinite (omega_min={net.omega_min:.4g}); "
            "only I - rho W > 0 is enforced",
            stacklevel=2,
        )
