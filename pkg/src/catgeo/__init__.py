"""Category learning and the geometry of neural representations.

A small, fully deterministic numpy stack for training noisy feed-forward
classifiers and measuring how category learning warps each layer's
representation: neural-distance profiles along morphed continua, virtual-input
inversion, Fisher/divergence metrics, and a KS-based categoricality index.
"""

from catgeo.errors import (
    CatgeoError,
    ConfigurationError,
    EvaluationError,
    FormatError,
    NumericalError,
)

__all__ = [
    "CatgeoError",
    "ConfigurationError",
    "EvaluationError",
    "FormatError",
    "NumericalError",
]

__version__ = "0.1.0"
