"""Exception hierarchy shared across the package."""


class CatgeoError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(CatgeoError):
    """Invalid network/experiment configuration (bad shapes, bad keys, ...)."""


class NumericalError(CatgeoError):
    """Non-finite values encountered during a numerical computation."""


class EvaluationError(CatgeoError):
    """A well-posed quantity could not be evaluated (degenerate inputs,
    non-convergent quadrature, dead layers, ...)."""


class FormatError(CatgeoError):
    """Malformed binary or text input file."""
