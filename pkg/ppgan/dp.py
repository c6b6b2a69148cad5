"""
Differential-privacy mechanism toolbox: L2 clipping, the Gaussian mechanism
and the two noise-calibration formulas.

Notation: C is the per-example clip bound, sigma is a noise multiplier in
units of the sensitivity, so the added noise has std sigma * sensitivity.
"""
import logging
import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .errors import ParameterError
from .ndnum import RngStream, Vector, l2_norm, sample_gaussian

logger = logging.getLogger(__name__)

# clip is a no-op for norms up to C + slack (absolute)
_CLIP_SLACK = 1e-12


@dataclass(frozen=True)
class ClipSpec:
    """Per-example L2 clip bound C."""
    bound: float

    def __post_init__(self):
        if not (math.isfinite(self.bound) and self.bound > 0):
            raise ParameterError(f"clip bound must be positive and finite, got {self.bound}")


@dataclass(frozen=True)
class GaussianMechanismSpec:
    sensitivity: float
    sigma: float

    def __post_init__(self):
        for name in ("sensitivity", "sigma"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ParameterError(f"{name} must be finite and >= 0, got {value}")

    @property
    def noise_std(self) -> float:
        return self.sigma * self.sensitivity


@dataclass(frozen=True)
class PrivacyTarget:
    """(epsilon, delta) goal; epsilon = inf is the non-private sentinel."""
    epsilon: float
    delta: float

    def __post_init__(self):
        if math.isnan(self.epsilon) or not self.epsilon > 0:
            raise ParameterError(f"epsilon must be > 0 (or inf), got {self.epsilon}")
        if not 0 < self.delta < 1:
            raise ParameterError(f"delta must lie in (0, 1), got {self.delta}")

    @property
    def non_private(self) -> bool:
        return math.isinf(self.epsilon)


def clip_l2(g, spec: ClipSpec) -> Vector:
    """
    g * min(1, C / ||g||).

    Norms up to C + 1e-12 pass through unchanged, so the output norm never
    exceeds C + 1e-12 beyond the rounding of the rescale. The zero vector is
    returned unchanged (the 0/0 case is a no-op).
    """
    g = np.asarray(g, dtype=np.float64)
    norm = l2_norm(g)
    if norm <= spec.bound + _CLIP_SLACK:
        return g.copy()
    return g * (spec.bound / norm)


def clipped_sum(per_example: np.ndarray, spec: ClipSpec) -> Tuple[Vector, Vector]:
    """
    Clip every row with `clip_l2` and sum in row order.

    Returns:
        (sum of clipped rows, pre-clip row norms)
    """
    per_example = np.asarray(per_example, dtype=np.float64)
    norms = np.array([l2_norm(row) for row in per_example])
    clipped = np.stack([clip_l2(row, spec) for row in per_example])
    return np.sum(clipped, axis=0), norms


def sensitivity_of_clipped_sum(spec: ClipSpec, substitution: bool = False) -> float:
    """
    L2 sensitivity of a sum of C-clipped vectors.

    Neighbouring datasets differ by one added or removed record, giving C;
    substituting a record is two such moves, giving 2C.
    """
    return 2.0 * spec.bound if substitution else spec.bound


def gaussian_mechanism(value, spec: GaussianMechanismSpec, rng: RngStream) -> Vector:
    """
    value + N(0, (sigma * sensitivity)^2) per coordinate.

    The stream always advances by the draw for len(value) coordinates, so a
    zero-noise call leaves later draws where a noisy call would.
    """
    value = np.asarray(value, dtype=np.float64)
    noise = sample_gaussian(rng, value.size, 0.0, spec.noise_std)
    if spec.noise_std == 0:
        return value.copy()
    return value + noise.reshape(value.shape)


def calibrate_sigma_lemma1(target: PrivacyTarget, sensitivity: float) -> float:
    """
    Infimum sqrt(2 ln(1.25/delta)) * sensitivity / epsilon of admissible noise std.

    The bound is proven for epsilon < 1 only; larger epsilon is accepted and
    flagged. Callers must use a sigma strictly above the returned value.
    """
    if not 0 < target.delta < 1:
        raise ParameterError(f"delta must lie in (0, 1), got {target.delta}")
    if sensitivity < 0:
        raise ParameterError(f"sensitivity must be >= 0, got {sensitivity}")
    if target.non_private:
        return 0.0
    if target.epsilon >= 1:
        logger.warning(f"⚠️  Gaussian-mechanism bound used with epsilon={target.epsilon:g} >= 1; "
                       f"its proof only covers epsilon < 1, rely on the moments accountant")
    return math.sqrt(2.0 * math.log(1.25 / target.delta)) * sensitivity / target.epsilon


def lemma1_epsilon(sigma: float, delta: float, sensitivity: float = 1.0) -> float:
    """Per-release epsilon implied by the Gaussian-mechanism bound for a given sigma."""
    if not sigma > 0:
        raise ParameterError(f"sigma must be > 0, got {sigma}")
    if not 0 < delta < 1:
        raise ParameterError(f"delta must lie in (0, 1), got {delta}")
    return math.sqrt(2.0 * math.log(1.25 / delta)) * sensitivity / sigma


def calibrate_sigma_eq17(target: PrivacyTarget, q: float, n_d: int) -> float:
    """
    Training-loop noise scale sigma_n = 2 q sqrt(n_d ln(1/delta)) / epsilon.

    Natural log throughout; 0 for the non-private sentinel.
    """
    if not 0 < q <= 1:
        raise ParameterError(f"sampling probability q must lie in (0, 1], got {q}")
    if n_d < 1:
        raise ParameterError(f"n_d must be >= 1, got {n_d}")
    if not 0 < target.delta < 1:
        raise ParameterError(f"delta must lie in (0, 1), got {target.delta}")
    if target.non_private:
        return 0.0
    return 2.0 * q * math.sqrt(n_d * math.log(1.0 / target.delta)) / target.epsilon


def eps_eq17(sigma: float, q: float, steps: int, delta: float) -> float:
    """The closed form solved for epsilon (reporting only)."""
    if sigma <= 0:
        return math.inf
    return 2.0 * q * math.sqrt(steps * math.log(1.0 / delta)) / sigma


def delta_eq17(sigma: float, q: float, steps: int, epsilon: float) -> float:
    """The closed form solved for delta (reporting only), capped at 1."""
    if sigma <= 0:
        return 1.0
    if steps == 0:
        return 0.0
    exponent = (epsilon * sigma / (2.0 * q)) ** 2 / steps
    return min(1.0, math.exp(-exponent))


def strong_composition_epsilon(eps0: float, steps: int, delta: float) -> float:
    """sqrt(2 T ln(1/delta)) eps0 + T eps0 (e^eps0 - 1), the advanced-composition baseline."""
    if not 0 < delta < 1:
        raise ParameterError(f"delta must lie in (0, 1), got {delta}")
    return (math.sqrt(2.0 * steps * math.log(1.0 / delta)) * eps0
            + steps * eps0 * math.expm1(eps0))


def amplified_epsilon(eps0: float, q: float) -> float:
    """Per-step epsilon of a mechanism run on a q-subsample: ln(1 + q (e^eps0 - 1))."""
    return math.log1p(q * math.expm1(eps0))


def strong_composition_baseline(sigma: float, q: float, steps: int, delta: float) -> float:
    """
    Epsilon of `steps` sub-sampled Gaussian steps under advanced composition.

    Half of delta goes to the composition slack, the other half is split evenly
    over the per-step Gaussian-mechanism bounds.
    """
    if steps == 0:
        return 0.0
    step_delta = delta / (2.0 * steps)
    eps0 = amplified_epsilon(lemma1_epsilon(sigma, step_delta), q)
    return strong_composition_epsilon(eps0, steps, delta / 2.0)
