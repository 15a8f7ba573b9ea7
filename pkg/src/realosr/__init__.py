"""Omnidirectional image super-resolution at desk scale.

Sphere projections, real-world degradation synthesis, spherical metrics,
unfolding-guided toy diffusion SR and its training/evaluation harness.
"""

__version__ = "0.1.0"

from ._validation import (
    ConfigurationError,
    CoverageError,
    OutOfHemisphereError,
    RealOSRError,
    ValidationError,
)
from .degrade import PRESETS, DegradationConfig, DegradationParams, PairRecord, synthesize_pair
from .metrics import MetricReport, ws_psnr, ws_ssim
from .predictor import DegradationPredictor
from .sphere import TangentGrid, TangentProjector
from .training import RealOSR

__all__ = [
    "RealOSRError",
    "ValidationError",
    "ConfigurationError",
    "CoverageError",
    "OutOfHemisphereError",
    "DegradationConfig",
    "DegradationParams",
    "PairRecord",
    "PRESETS",
    "synthesize_pair",
    "MetricReport",
    "ws_psnr",
    "ws_ssim",
    "DegradationPredictor",
    "TangentGrid",
    "TangentProjector",
    "RealOSR",
]
