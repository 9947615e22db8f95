"""Bayesian correlated component analysis with classical CCA/CorrCA baselines."""

__version__ = "0.1.0"

from .model import (  # noqa: E402
    Coupling,
    FitResult,
    GroundTruth,
    Hyperparameters,
    NoiseModel,
    PosteriorState,
    ViewSet,
    default_hyperparameters,
    informed_noise_prior,
)
from .inference import fit, fit_with_restarts  # noqa: E402
from .simulate import SimSpec, generate_dataset  # noqa: E402

__all__ = [
    "Coupling",
    "FitResult",
    "GroundTruth",
    "Hyperparameters",
    "NoiseModel",
    "PosteriorState",
    "SimSpec",
    "ViewSet",
    "default_hyperparameters",
    "fit",
    "fit_with_restarts",
    "generate_dataset",
    "informed_noise_prior",
]
