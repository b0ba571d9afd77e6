"""Manifold-latent sequence modeling for multichannel signals.

A self-contained stack: an fp64 reverse-mode gradient engine with a fixed
operator set, hypersphere / Poincare-ball latent geometry, a variational
encoder with manifold-constrained sampling, geodesic-penalized attention with
a mixture-of-experts feed-forward, Dormand-Prince neural-ODE dynamics, the
multi-term geometric training objective, rigid cross-subject alignment, and a
CLI that trains and evaluates on synthetic or file-based recordings.
"""

from .errors import (
    DataError,
    DegenerateInputError,
    DivergenceError,
    FormatError,
    GeoManifoldError,
    NumericalError,
    ShapeError,
    SingularityError,
    TrainingError,
    UsageError,
)
from .tensor import Tensor, backprop

__all__ = [
    "Tensor",
    "backprop",
    "GeoManifoldError",
    "UsageError",
    "ShapeError",
    "FormatError",
    "DataError",
    "NumericalError",
    "DegenerateInputError",
    "SingularityError",
    "DivergenceError",
    "TrainingError",
]

__version__ = "0.1.0"
