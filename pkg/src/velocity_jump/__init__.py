"""Velocity-jump random motion: exact determinant operator, diffusion-limit expansion,
spectral reference solver and Monte Carlo."""

__version__ = "0.1.0"

from .algebra import OperatorPoly, PerturbationSeries, det_bareiss, det_rank_one, scale_and_center
from .model import ModelConfig, build_L, det_model, perturbation_series, reconcile_published

__all__ = [
    "OperatorPoly",
    "PerturbationSeries",
    "det_bareiss",
    "det_rank_one",
    "scale_and_center",
    "ModelConfig",
    "build_L",
    "det_model",
    "perturbation_series",
    "reconcile_published",
]
