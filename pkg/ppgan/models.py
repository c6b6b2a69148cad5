"""
Data models shared across the PPGAN toolkit.
"""
import hashlib
import math
from dataclasses import dataclass, field, fields
from datetime import datetime
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np

from .errors import ParameterError, ValidationError

ICD9_VECTOR_LENGTH = 1071


def _invalid(key: str, message: str) -> ParameterError:
    err = ParameterError(f"{key}: {message}")
    err.key = key
    return err


@dataclass(frozen=True)
class TrainConfig:
    """Inputs of the private training loop (defaults are the full-scale MNIST settings)."""
    alpha_d: float = 5.0e-5           # learning rate of the critic
    alpha_g: float = 5.0e-5           # learning rate of the generator
    weight_clip: float = 0.01         # c: critic weights clamped to [-c, c]
    grad_clip: float = 1.0e-2         # C: per-example L2 clip bound and noise sensitivity
    batch_size: int = 64              # m
    critic_iters: int = 5             # n_d
    gen_iters: int = 2000             # n_g
    noise_scale: float = 0.0          # sigma_n, in units of C
    noise_calibration: Literal['accountant', 'eq17', 'fixed'] = 'accountant'
    latent_dim: int = 64
    hidden_dim: int = 128
    seed: int = 1
    delta: float = 1.0e-5
    epsilon: float = 10.0             # math.inf means non-private
    lambda_max: int = 32
    dataset: Literal['digits', 'mnist', 'ehr'] = 'digits'
    downsample: Optional[int] = None
    max_examples: Optional[int] = None
    checkpoint_interval: int = 500
    log_interval: int = 100

    def __post_init__(self):
        for key in ("alpha_d", "alpha_g", "weight_clip", "grad_clip"):
            value = getattr(self, key)
            if not (math.isfinite(value) and value > 0):
                raise _invalid(key, f"must be positive and finite, got {value}")
        for key in ("batch_size", "critic_iters", "gen_iters", "latent_dim",
                    "hidden_dim", "lambda_max", "checkpoint_interval", "log_interval"):
            if getattr(self, key) < 1:
                raise _invalid(key, f"must be >= 1, got {getattr(self, key)}")
        if not 0 < self.delta < 1:
            raise _invalid("delta", f"must lie in (0, 1), got {self.delta}")
        if not self.epsilon > 0:
            raise _invalid("epsilon", f"must be > 0 or inf, got {self.epsilon}")
        if self.noise_calibration not in ('accountant', 'eq17', 'fixed'):
            raise _invalid("noise_calibration", f"unknown method {self.noise_calibration!r}")
        if self.dataset not in ('digits', 'mnist', 'ehr'):
            raise _invalid("dataset", f"unknown dataset {self.dataset!r}")
        if not (math.isfinite(self.noise_scale) and self.noise_scale >= 0):
            raise _invalid("noise_scale", f"must be finite and >= 0, got {self.noise_scale}")
        if self.downsample is not None and self.downsample < 1:
            raise _invalid("downsample", f"must be >= 1, got {self.downsample}")
        if self.max_examples is not None and self.max_examples < 1:
            raise _invalid("max_examples", f"must be >= 1, got {self.max_examples}")

        # sigma_n = 0 iff epsilon = inf (only checkable once sigma_n is fixed)
        if math.isinf(self.epsilon) and self.noise_scale != 0:
            raise _invalid("noise_scale", "must be 0 when epsilon = inf")
        if (math.isfinite(self.epsilon) and self.noise_calibration == 'fixed'
                and self.noise_scale == 0):
            raise _invalid("noise_scale", "a private run (finite epsilon) needs noise_scale > 0")

    @property
    def is_private(self) -> bool:
        return math.isfinite(self.epsilon)

    def canonical_text(self) -> str:
        """Deterministic `key = value` rendering (sorted keys, repr floats)."""
        lines = []
        for f in sorted(fields(self), key=lambda f: f.name):
            value = getattr(self, f.name)
            if isinstance(value, float):
                value = "inf" if math.isinf(value) else repr(value)
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_text().encode("utf-8")).hexdigest()


@dataclass
class StepMetrics:
    """Per-iteration training measurements (one metrics.csv row)."""
    iteration: int
    critic_loss: float = 0.0
    gen_loss: float = 0.0
    grad_norm_pre_clip: float = 0.0
    eps_spent: float = 0.0

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in (self.critic_loss, self.gen_loss,
                                              self.grad_norm_pre_clip))


@dataclass
class Checkpoint:
    """Everything needed to resume training bit-for-bit."""
    theta: np.ndarray                 # generator FlatView values
    omega: np.ndarray                 # critic FlatView values
    iteration: int                    # completed generator iterations
    ledger_snapshot: str
    rng_counters: Dict[int, int]      # stream_id -> counter
    config_hash: str
    config_text: str = ""


@dataclass
class TrainResult:
    """Output of `training.train`."""
    checkpoint: Checkpoint
    metrics: List[StepMetrics]
    final_epsilon: float
    sigma_used: float
    sigma_eq17: float
    halted: bool = False

    @property
    def non_private(self) -> bool:
        return math.isinf(self.final_epsilon) and self.sigma_used == 0

    def format_summary(self, delta: float) -> str:
        lines = [
            "PPGAN TRAINING SUMMARY",
            f"generator_iterations = {self.checkpoint.iteration}",
            f"halted_on_budget = {str(self.halted).lower()}",
        ]
        if self.non_private:
            lines.append("privacy = non-private (epsilon = inf, sigma_n = 0)")
        else:
            lines.append(f"final_epsilon = {self.final_epsilon:.6f} (moments accountant, authoritative)")
            lines.append(f"delta = {delta:g}")
        lines.append(f"sigma_n_used = {self.sigma_used:.6f}")
        lines.append(f"sigma_n_eq17 = {self.sigma_eq17:.6f}")
        if self.metrics:
            last = self.metrics[-1]
            lines.append(f"final_critic_loss = {last.critic_loss:.6f}")
            lines.append(f"final_gen_loss = {last.gen_loss:.6f}")
        lines.append(f"config_hash = {self.checkpoint.config_hash}")
        return "\n".join(lines) + "\n"

    def print_summary(self, delta: float):
        """Print a human-readable summary."""
        print("\n" + "=" * 60)
        print(self.format_summary(delta), end="")
        print("=" * 60 + "\n")


@dataclass
class RunManifest:
    """Provenance of one training run, written next to its outputs."""
    config_path: str
    config: TrainConfig
    dataset_fingerprint: str
    output_dir: str
    started_at: datetime = field(default_factory=datetime.now)
    finished_at: Optional[datetime] = None

    def to_dict(self) -> dict:
        return {
            'config_path': self.config_path,
            'config': self.config.canonical_text(),
            'config_hash': self.config.config_hash(),
            'dataset_fingerprint': self.dataset_fingerprint,
            'output_dir': self.output_dir,
            'started_at': self.started_at.isoformat(),
            'finished_at': self.finished_at.isoformat() if self.finished_at else None,
        }


@dataclass
class IdxImageSet:
    """Parsed IDX image container (uint8 pixels, count x rows x cols)."""
    count: int
    rows: int
    cols: int
    pixels: np.ndarray

    def __post_init__(self):
        if self.pixels.shape != (self.count, self.rows, self.cols):
            raise ValidationError(
                f"pixel array shape {self.pixels.shape} does not match "
                f"header ({self.count}, {self.rows}, {self.cols})"
            )


@dataclass
class EhrRecord:
    """Binary admission vector over the 1071 truncated ICD9 codes."""
    codes: np.ndarray

    def __post_init__(self):
        self.codes = np.asarray(self.codes, dtype=np.uint8)
        if self.codes.shape != (ICD9_VECTOR_LENGTH,):
            raise ValidationError(f"EHR vector must have length {ICD9_VECTOR_LENGTH}, "
                                  f"got shape {self.codes.shape}")
        if np.any(self.codes > 1):
            raise ValidationError("EHR vector entries must be 0 or 1")

    def positions(self) -> List[int]:
        """1-indexed positions of the set bits."""
        return [int(i) + 1 for i in np.flatnonzero(self.codes)]

    def __eq__(self, other):
        return isinstance(other, EhrRecord) and np.array_equal(self.codes, other.codes)


@dataclass
class SynthEhrModel:
    """Per-code Bernoulli rates plus pairwise comorbidity lifts (codes 1-indexed)."""
    prevalence: np.ndarray
    comorbidity_pairs: List[Tuple[int, int, float]] = field(default_factory=list)

    def __post_init__(self):
        self.prevalence = np.asarray(self.prevalence, dtype=np.float64)
        if self.prevalence.shape != (ICD9_VECTOR_LENGTH,):
            raise ValidationError(f"prevalence must have length {ICD9_VECTOR_LENGTH}")
        if np.any(self.prevalence < 0) or np.any(self.prevalence > 1):
            raise ValidationError("prevalence rates must lie in [0, 1]")
        for a, b, lift in self.comorbidity_pairs:
            for code in (a, b):
                if not 1 <= code <= ICD9_VECTOR_LENGTH:
                    raise ValidationError(f"comorbidity code {code} outside [1, {ICD9_VECTOR_LENGTH}]")
            if lift < 0:
                raise ValidationError(f"comorbidity lift must be >= 0, got {lift}")


@dataclass
class ScoreReport:
    """Inception-style scores of one run plus its Generate Score."""
    is_values: List[float]
    gs: float
    epsilon_label: float
    seed: int = 0

    @property
    def is_mean(self) -> float:
        return float(np.mean(self.is_values))

    @property
    def is_std(self) -> float:
        return float(np.std(self.is_values))

    def csv_row(self) -> List[str]:
        eps = "inf" if math.isinf(self.epsilon_label) else repr(float(self.epsilon_label))
        return [eps, str(self.seed), repr(self.is_mean), repr(self.is_std), repr(float(self.gs))]
