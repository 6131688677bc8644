"""Gradient-free sampling with ensemble score estimates in reverse diffusion."""

__version__ = "0.1.0"

from .diffusion import ForwardSpec, NoiseSchedule, kernel_moments
from .estimator import ScoreEstimator, build_gaussian_is, build_mis, freeze_estimator
from .sampler import SamplerConfig, run

__all__ = [
    "ForwardSpec",
    "NoiseSchedule",
    "kernel_moments",
    "ScoreEstimator",
    "build_gaussian_is",
    "build_mis",
    "freeze_estimator",
    "SamplerConfig",
    "run",
]
