"""
PPGAN package initialization.
"""

from .cli import main
from .models import (
    TrainConfig,
    StepMetrics,
    Checkpoint,
    TrainResult,
    RunManifest,
    EhrRecord,
    IdxImageSet,
    SynthEhrModel,
    ScoreReport
)
from .config import PPGANConfig
from .training import train

__version__ = "1.0.0"
__all__ = [
    "main",
    "train",
    "TrainConfig",
    "StepMetrics",
    "Checkpoint",
    "TrainResult",
    "RunManifest",
    "EhrRecord",
    "IdxImageSet",
    "SynthEhrModel",
    "ScoreReport",
    "PPGANConfig"
]
