"""
Configuration for the PPGAN toolkit.

Two layers:
- `PPGANConfig`: process-level settings read from the environment (.env supported).
- `load_train_config`: the flat `key = value` run config parsed into a `TrainConfig`.
"""
import math
import os
from dataclasses import fields
from pathlib import Path
from typing import Dict, Optional

from dotenv import load_dotenv

from .errors import ConfigError
from .models import TrainConfig

# Load environment variables from parent directory
env_path = Path(__file__).parent.parent / '.env'
if env_path.exists():
    load_dotenv(env_path)
else:
    load_dotenv()


class PPGANConfig:
    """Centralized process-level configuration."""

    # Logging
    LOG_LEVEL = os.getenv("PPGAN_LOG_LEVEL", "INFO")
    LOG_FILE = os.getenv("PPGAN_LOG_FILE", "ppgan.log")

    # Moments accountant
    LAMBDA_MAX = int(os.getenv("PPGAN_LAMBDA_MAX", 32))
    QUAD_TOLERANCE = float(os.getenv("PPGAN_QUAD_TOL", 1e-10))

    # Parameter cautions (q and n_d trade-offs at strong privacy levels)
    WARN_Q = float(os.getenv("PPGAN_WARN_Q", 0.05))
    WARN_CRITIC_ITERS = int(os.getenv("PPGAN_WARN_ND", 10))
    WARN_EPSILON = float(os.getenv("PPGAN_WARN_EPS", 10.0))

    # Sweep: allowed rise of median GS between adjacent epsilon levels (GS is a
    # per-run split statistic, noisy at desk scale)
    SWEEP_GS_TOLERANCE = float(os.getenv("PPGAN_SWEEP_GS_TOL", 0.5))

    # Fixed stream ids; every random draw derives from the one `seed`
    STREAM_TRAIN = 1
    STREAM_DATA = 2
    STREAM_EVAL = 3
    STREAM_NOISE = 4
    STREAM_INIT = 5

    # Output file names
    METRICS_FILE = "metrics.csv"
    SCORES_FILE = "scores.csv"
    SUMMARY_FILE = "summary.txt"
    MANIFEST_FILE = "manifest.json"
    CHECKPOINT_PATTERN = "checkpoint-{:06d}.bin"

    @classmethod
    def validate(cls):
        """Validate environment-provided values."""
        problems = []

        if cls.LOG_LEVEL.upper() not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            problems.append(f"PPGAN_LOG_LEVEL={cls.LOG_LEVEL}")
        if cls.LAMBDA_MAX < 1:
            problems.append(f"PPGAN_LAMBDA_MAX={cls.LAMBDA_MAX}")
        if not cls.QUAD_TOLERANCE > 0:
            problems.append(f"PPGAN_QUAD_TOL={cls.QUAD_TOLERANCE}")
        if not 0 <= cls.SWEEP_GS_TOLERANCE <= 1:
            problems.append(f"PPGAN_SWEEP_GS_TOL={cls.SWEEP_GS_TOLERANCE}")

        if problems:
            raise ValueError(f"Invalid environment settings: {', '.join(problems)}")

        return True


def _parse_float(raw: str) -> float:
    text = raw.strip().lower()
    if text in ("inf", "+inf", "infinity", "∞"):
        return math.inf
    return float(text)


def _parse_int(raw: str) -> int:
    # accept 2000, 2e3, 5.0e5
    value = float(raw)
    if not value.is_integer():
        raise ValueError(f"expected an integer, got {raw!r}")
    return int(value)


def _parse_optional_int(raw: str) -> Optional[int]:
    if raw.strip().lower() in ("", "none", "off", "0"):
        return None
    return _parse_int(raw)


_FIELD_PARSERS = {
    "alpha_d": _parse_float,
    "alpha_g": _parse_float,
    "weight_clip": _parse_float,
    "grad_clip": _parse_float,
    "batch_size": _parse_int,
    "critic_iters": _parse_int,
    "gen_iters": _parse_int,
    "noise_scale": _parse_float,
    "noise_calibration": lambda raw: raw.strip().lower(),
    "latent_dim": _parse_int,
    "hidden_dim": _parse_int,
    "seed": _parse_int,
    "delta": _parse_float,
    "epsilon": _parse_float,
    "lambda_max": _parse_int,
    "dataset": lambda raw: raw.strip().lower(),
    "downsample": _parse_optional_int,
    "max_examples": _parse_optional_int,
    "checkpoint_interval": _parse_int,
    "log_interval": _parse_int,
}

# keep the parser table honest against the dataclass
assert set(_FIELD_PARSERS) == {f.name for f in fields(TrainConfig)}


def parse_config_text(text: str, overrides: Optional[Dict[str, str]] = None) -> TrainConfig:
    """
    Parse flat `key = value` text into a validated TrainConfig.

    Args:
        text: Config file contents (`#` starts a comment)
        overrides: Raw string values that win over the file (e.g. `--seed`)

    Returns:
        TrainConfig

    Raises:
        ConfigError: with the offending line number and key
    """
    values = {}
    lines_of = {}

    for lineno, raw_line in enumerate(text.splitlines(), 1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", line=lineno)

        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _FIELD_PARSERS:
            raise ConfigError("unknown key", line=lineno, key=key)
        if key in values:
            raise ConfigError("duplicate key", line=lineno, key=key)

        try:
            values[key] = _FIELD_PARSERS[key](raw)
        except ValueError as e:
            raise ConfigError(f"cannot parse value {raw!r}: {e}", line=lineno, key=key) from e
        lines_of[key] = lineno

    for key, raw in (overrides or {}).items():
        if key not in _FIELD_PARSERS:
            raise ConfigError("unknown override", key=key)
        try:
            values[key] = _FIELD_PARSERS[key](str(raw))
        except ValueError as e:
            raise ConfigError(f"cannot parse override {raw!r}: {e}", key=key) from e
        lines_of.pop(key, None)

    # epsilon = inf is the non-private sentinel: no noise at all
    if math.isinf(values.get("epsilon", TrainConfig.epsilon)):
        values["noise_scale"] = 0.0
        values["noise_calibration"] = "fixed"

    try:
        config = TrainConfig(**values)
    except ValueError as e:
        key = getattr(e, "key", None)
        raise ConfigError(str(e), line=lines_of.get(key), key=key) from e

    return config


def load_train_config(path, overrides: Optional[Dict[str, str]] = None) -> TrainConfig:
    """Read and parse a run config file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"), overrides)
