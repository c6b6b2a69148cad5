"""
Moments accountant for the sub-sampled Gaussian mechanism.

The ledger tracks beta(lambda), the log moment generating function of the
privacy loss, on a grid of integer orders. Compositions add; the tail bound

    eps(delta) = min_lambda (beta(lambda) + ln(1/delta)) / lambda

converts the ledger into an (epsilon, delta) guarantee.

One invocation of the sub-sampled Gaussian mechanism compares
mu0 = N(0, sigma^2) with the mixture mu = (1-q) mu0 + q N(1, sigma^2)
(sensitivity normalised to 1, sigma is the noise multiplier). beta(lambda) is
the larger of log E_mu[(mu/mu0)^lambda] and log E_mu0[(mu0/mu)^lambda], both
evaluated by adaptive quadrature in log-space.

A brute-force path over finite outcome tables (`DiscreteMechanism`) is kept
next to it as the oracle the numerics are validated against.
"""
import logging
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Sequence, Tuple, Union

import numpy as np
from scipy import integrate
from scipy.special import logsumexp

from .config import PPGANConfig
from .errors import AccountantNumericError, ParameterError

logger = logging.getLogger(__name__)

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_PEAK_GRID_POINTS = 20001
_TAIL_SIGMAS = 40.0


class InfiniteLoss:
    """Sentinel for a distinguishing event (outcome impossible under d')."""
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "INFINITE_LOSS"


INFINITE_LOSS = InfiniteLoss()


@dataclass(frozen=True)
class MechanismStep:
    """One sub-sampled Gaussian release: sampling probability q, noise multiplier sigma."""
    q: float
    sigma: float

    def __post_init__(self):
        if not 0 < self.q <= 1:
            raise ParameterError(f"q must lie in (0, 1], got {self.q}")
        if not (math.isfinite(self.sigma) and self.sigma > 0):
            raise ParameterError(f"sigma must be positive and finite, got {self.sigma}")


@dataclass(frozen=True)
class MomentLedger:
    """Accumulated beta(lambda) per grid order plus the number of composed steps."""
    lambda_grid: Tuple[float, ...]
    beta: np.ndarray = field(compare=False)
    steps: int = 0
    distinguishing: bool = False  # a composed mechanism had infinite loss

    def __post_init__(self):
        grid = np.asarray(self.lambda_grid, dtype=np.float64)
        if grid.size and (np.any(grid <= 0) or np.any(np.diff(grid) <= 0)):
            raise ParameterError("lambda grid must be positive and strictly ascending")
        if np.shape(self.beta) != grid.shape:
            raise ParameterError(f"beta has shape {np.shape(self.beta)}, grid has {grid.shape}")
        if not np.all(np.isfinite(self.beta)) or np.any(np.asarray(self.beta) < 0):
            raise ParameterError("beta entries must be finite and >= 0")

    def is_convex(self, slack: float = 1e-9) -> bool:
        """Second differences of beta over the grid are >= -slack."""
        if len(self.lambda_grid) < 3:
            return True
        return bool(np.all(np.diff(self.beta, n=2) >= -slack))

    def snapshot(self) -> str:
        """Plain-text key-value snapshot (embedded in checkpoints)."""
        lines = [f"steps = {self.steps}",
                 f"distinguishing = {str(self.distinguishing).lower()}"]
        for lam, beta in zip(self.lambda_grid, self.beta):
            lines.append(f"beta[{lam!r}] = {float(beta)!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_snapshot(cls, text: str) -> "MomentLedger":
        steps, distinguishing = 0, False
        grid, betas = [], []
        for raw in text.splitlines():
            line = raw.strip()
            if not line:
                continue
            key, value = (part.strip() for part in line.split("=", 1))
            if key == "steps":
                steps = int(value)
            elif key == "distinguishing":
                distinguishing = value == "true"
            elif key.startswith("beta[") and key.endswith("]"):
                grid.append(float(key[5:-1]))
                betas.append(float(value))
            else:
                raise ParameterError(f"unknown ledger snapshot key {key!r}")
        return cls(tuple(grid), np.array(betas, dtype=np.float64), steps, distinguishing)


@dataclass(frozen=True)
class DiscreteMechanism:
    """Finite outcome tables for one fixed neighbouring pair (d, d')."""
    outcomes: Tuple
    prob_d: Tuple[float, ...]
    prob_d_prime: Tuple[float, ...]

    def __post_init__(self):
        if not len(self.outcomes) == len(self.prob_d) == len(self.prob_d_prime):
            raise ParameterError("outcome and probability tables differ in length")
        for name in ("prob_d", "prob_d_prime"):
            table = np.asarray(getattr(self, name), dtype=np.float64)
            if np.any(table < 0):
                raise ParameterError(f"{name} has negative probabilities")
            if abs(table.sum() - 1.0) > 1e-12:
                raise ParameterError(f"{name} sums to {table.sum()!r}, not 1")

    def swapped(self) -> "DiscreteMechanism":
        return DiscreteMechanism(self.outcomes, self.prob_d_prime, self.prob_d)


def randomized_response(p: float) -> DiscreteMechanism:
    """Answer truthfully with probability p; d holds bit 1, d' holds bit 0."""
    return DiscreteMechanism((1, 0), (p, 1.0 - p), (1.0 - p, p))


def default_ledger(lambda_max: int = None) -> MomentLedger:
    """Fresh ledger on the integer grid 1..lambda_max."""
    lambda_max = lambda_max or PPGANConfig.LAMBDA_MAX
    grid = tuple(float(lam) for lam in range(1, lambda_max + 1))
    return MomentLedger(grid, np.zeros(len(grid)), 0)


# ---------------------------------------------------------------------------
# Discrete oracle

def privacy_loss(mech: DiscreteMechanism, outcome) -> Union[float, InfiniteLoss]:
    """log P[outcome | d] / P[outcome | d']; INFINITE_LOSS when P[outcome | d'] = 0."""
    idx = mech.outcomes.index(outcome)
    p, p_prime = mech.prob_d[idx], mech.prob_d_prime[idx]
    if p_prime == 0:
        return INFINITE_LOSS
    if p == 0:
        return -math.inf
    return math.log(p) - math.log(p_prime)


def log_mgf_discrete(mech: DiscreteMechanism, lam: float) -> Union[float, InfiniteLoss]:
    """log E_{tau ~ d}[exp(lam * c(tau))] by exhaustive enumeration."""
    if lam < 0:
        raise ParameterError(f"lambda must be >= 0, got {lam}")
    terms = []
    for p, p_prime in zip(mech.prob_d, mech.prob_d_prime):
        if p == 0:
            continue
        if p_prime == 0:
            return INFINITE_LOSS
        terms.append(math.log(p) + lam * (math.log(p) - math.log(p_prime)))
    return float(logsumexp(terms))


def discrete_moments(mech: DiscreteMechanism, lambda_grid: Sequence[float]):
    """beta per grid order, max over both directions; INFINITE_LOSS if unbounded."""
    values = []
    for lam in lambda_grid:
        forward = log_mgf_discrete(mech, lam)
        backward = log_mgf_discrete(mech.swapped(), lam)
        if forward is INFINITE_LOSS or backward is INFINITE_LOSS:
            return INFINITE_LOSS
        values.append(max(forward, backward, 0.0))
    return np.array(values, dtype=np.float64)


# ---------------------------------------------------------------------------
# Sub-sampled Gaussian

def _log_normal(z: np.ndarray, mean: float, sigma: float) -> np.ndarray:
    return -0.5 * ((z - mean) / sigma) ** 2 - math.log(sigma) - _LOG_SQRT_2PI


def _log_mixture(z: np.ndarray, q: float, sigma: float) -> np.ndarray:
    if q == 1.0:
        return _log_normal(z, 1.0, sigma)
    return np.logaddexp(math.log1p(-q) + _log_normal(z, 0.0, sigma),
                        math.log(q) + _log_normal(z, 1.0, sigma))


def _log_expectation(log_integrand, lo: float, hi: float, diagnostics: dict) -> float:
    """log of the integral of exp(log_integrand) over [lo, hi], peak-normalised."""
    grid = np.linspace(lo, hi, _PEAK_GRID_POINTS)
    values = log_integrand(grid)
    peak = float(np.max(values))
    z_peak = float(grid[int(np.argmax(values))])

    def integrand(z):
        return math.exp(float(log_integrand(z)) - peak)

    points = sorted({p for p in (z_peak, 0.0, 1.0) if lo < p < hi})
    tol = PPGANConfig.QUAD_TOLERANCE
    result = integrate.quad(integrand, lo, hi, points=points, epsabs=tol,
                            epsrel=1e-12, limit=500, full_output=1)
    value, abserr = result[0], result[1]
    if len(result) > 3 and abserr > 100 * tol * max(1.0, value):
        raise AccountantNumericError(
            "moment quadrature did not converge",
            dict(diagnostics, abserr=abserr, value=value, message=result[3]),
        )
    if not value > 0:
        raise AccountantNumericError("moment quadrature returned a non-positive integral",
                                     dict(diagnostics, value=value))
    return peak + math.log(value)


@lru_cache(maxsize=8192)
def _log_mgf_gaussian(q: float, sigma: float, lam: float) -> float:
    lo = -(lam + 1.0) - _TAIL_SIGMAS * sigma
    hi = (lam + 1.0) + _TAIL_SIGMAS * sigma

    def toward_mixture(z):
        # E_mu[(mu/mu0)^lam] = integral of mu^(lam+1) mu0^(-lam)
        return (lam + 1.0) * _log_mixture(z, q, sigma) - lam * _log_normal(z, 0.0, sigma)

    def toward_base(z):
        # E_mu0[(mu0/mu)^lam] = integral of mu0^(lam+1) mu^(-lam)
        return (lam + 1.0) * _log_normal(z, 0.0, sigma) - lam * _log_mixture(z, q, sigma)

    diagnostics = dict(q=q, sigma=sigma, lam=lam)
    first = _log_expectation(toward_mixture, lo, hi, dict(diagnostics, direction="mixture"))
    second = _log_expectation(toward_base, lo, hi, dict(diagnostics, direction="base"))
    # rounding can leave a -1e-16 where the exact value is 0
    return max(first, second, 0.0)


def log_mgf_subsampled_gaussian(step: MechanismStep, lam: float) -> float:
    """beta(lambda) of one sub-sampled Gaussian invocation."""
    if not lam > 0:
        raise ParameterError(f"lambda must be > 0, got {lam}")
    return _log_mgf_gaussian(float(step.q), float(step.sigma), float(lam))


# ---------------------------------------------------------------------------
# Ledger operations

def add_moments(ledger: MomentLedger, beta, times: int = 1) -> MomentLedger:
    """Compose `times` invocations of a mechanism with per-order moments `beta`."""
    if times < 1:
        raise ParameterError(f"times must be >= 1, got {times}")
    if beta is INFINITE_LOSS:
        return replace(ledger, steps=ledger.steps + times, distinguishing=True)
    beta = np.asarray(beta, dtype=np.float64)
    if beta.shape != ledger.beta.shape:
        raise ParameterError(f"moment vector shape {beta.shape} does not match ledger grid")
    return replace(ledger, beta=ledger.beta + times * beta, steps=ledger.steps + times)


def step_moments(ledger: MomentLedger, step: MechanismStep) -> np.ndarray:
    return np.array([log_mgf_subsampled_gaussian(step, lam) for lam in ledger.lambda_grid])


def accumulate(ledger: MomentLedger, step: MechanismStep, times: int = 1) -> MomentLedger:
    """beta[lambda] += times * beta_step(lambda); steps += times."""
    if times < 1:
        raise ParameterError(f"times must be >= 1, got {times}")
    return add_moments(ledger, step_moments(ledger, step), times)


def eps_for_delta(ledger: MomentLedger, delta: float) -> float:
    """min over grid of (beta + ln(1/delta)) / lambda; 0 for an empty grid."""
    return eps_for_delta_with_order(ledger, delta)[0]


def eps_for_delta_with_order(ledger: MomentLedger, delta: float) -> Tuple[float, float]:
    """Epsilon plus the minimising order (nan for an empty grid)."""
    if not 0 < delta < 1:
        raise ParameterError(f"delta must lie in (0, 1), got {delta}")
    if not ledger.lambda_grid:
        return 0.0, math.nan
    if ledger.distinguishing:
        return math.inf, math.nan
    grid = np.asarray(ledger.lambda_grid)
    values = (ledger.beta + math.log(1.0 / delta)) / grid
    best = int(np.argmin(values))
    return float(values[best]), float(grid[best])


def delta_for_eps(ledger: MomentLedger, epsilon: float) -> float:
    """min over grid of exp(beta - lambda * epsilon), capped at 1."""
    if not epsilon > 0:
        raise ParameterError(f"epsilon must be > 0, got {epsilon}")
    if not ledger.lambda_grid:
        return 0.0
    if ledger.distinguishing:
        return 1.0
    grid = np.asarray(ledger.lambda_grid)
    log_delta = float(np.min(ledger.beta - grid * epsilon))
    return math.exp(min(log_delta, 0.0))


def calibrate_sigma_for_budget(epsilon: float, delta: float, q: float, steps: int,
                               lambda_max: int = None, rel_tol: float = 1e-4) -> float:
    """
    Smallest noise multiplier (up to rel_tol) whose accountant epsilon after
    `steps` compositions stays within `epsilon`.
    """
    if math.isinf(epsilon):
        return 0.0
    if not epsilon > 0:
        raise ParameterError(f"epsilon must be > 0, got {epsilon}")
    if steps < 1:
        raise ParameterError(f"steps must be >= 1, got {steps}")
    fresh = default_ledger(lambda_max)

    def spent(sigma: float) -> float:
        return eps_for_delta(accumulate(fresh, MechanismStep(q, sigma), steps), delta)

    hi = 1.0
    while spent(hi) > epsilon:
        hi *= 2.0
        if hi > 1e6:
            raise ParameterError(f"no noise multiplier below 1e6 reaches epsilon={epsilon}")
    lo = hi / 2.0
    while spent(lo) <= epsilon:
        hi = lo
        lo /= 2.0
        if lo < 0.05:
            return hi

    while hi / lo > 1.0 + rel_tol:
        mid = math.sqrt(lo * hi)
        if spent(mid) <= epsilon:
            hi = mid
        else:
            lo = mid

    logger.info(f"Calibrated noise multiplier sigma={hi:.6f} for epsilon={epsilon:g}, "
                f"delta={delta:g}, q={q:.4g}, steps={steps}")
    return hi
