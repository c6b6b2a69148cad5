"""
Exception hierarchy for the PPGAN toolkit.

The CLI maps each family to a stable exit code (see `cli.EXIT_CODES`).
"""
from typing import Optional


class PPGANError(Exception):
    """Base class for every error raised by the package."""


class ShapeError(PPGANError, ValueError):
    """Array dimensions do not chain or do not match."""


class ParameterError(PPGANError, ValueError):
    """A numeric parameter is outside its documented domain."""


class ValidationError(PPGANError, ValueError):
    """An input record failed a domain check (e.g. an ICD9 code out of range)."""


class ConfigError(PPGANError):
    """Config file could not be parsed or violates an invariant."""

    def __init__(self, message: str, line: Optional[int] = None, key: Optional[str] = None):
        self.line = line
        self.key = key
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key '{key}'")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(f"{prefix}{message}")


class DataFormatError(PPGANError):
    """A data file has the wrong magic number or structure."""


class DataLengthError(PPGANError):
    """A data file is shorter than its header promises."""


class AccountantNumericError(PPGANError):
    """Numerical integration of a moment did not converge."""

    def __init__(self, message: str, diagnostics: Optional[dict] = None):
        self.diagnostics = diagnostics or {}
        super().__init__(f"{message} {self.diagnostics}" if self.diagnostics else message)


class BudgetExhaustedError(PPGANError):
    """The next critic step would push epsilon past the configured target."""

    def __init__(self, message: str, partial=None):
        # partial: TrainResult with everything computed before the halt
        self.partial = partial
        super().__init__(message)


class NumericAbortError(PPGANError):
    """Training produced a non-finite loss."""

    def __init__(self, message: str, checkpoint=None):
        self.checkpoint = checkpoint
        super().__init__(message)


class LabelModelError(PPGANError):
    """The evaluation classifier failed its accuracy gate."""
