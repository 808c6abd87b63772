"""Spherical-harmonic toolkit for spherical single-index models."""
from . import complexity, constants, estimators, harmonic_core, harmonic_tensor, harness, sim_model
from .harmonic_core import gegenbauer_eval, harmonic_dim, hermite_eval, hermite_to_gegenbauer
from .harmonic_tensor import harmonic_tensor_dense, HarmonicMatvec
from .sim_model import (
    GaussianHermite,
    NormalizedWrapper,
    mixture_link,
    sample_planted,
    build_transformation,
    csq_transformation,
)
from .estimators import EstimatorConfig, EstimatorResult

__version__ = "0.1.0"
