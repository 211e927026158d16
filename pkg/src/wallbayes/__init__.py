"""Bayesian inference of wall thermophysical properties from heat flux data."""

__version__ = "0.1.0"

from .errors import (ConfigError, ConvergenceError, DataError, InvalidArgumentError,  # noqa: E402
                     NumericalFailureError, OutOfRangeError, WallBayesError)

__all__ = [
    "__version__",
    "ConfigError",
    "ConvergenceError",
    "DataError",
    "InvalidArgumentError",
    "NumericalFailureError",
    "OutOfRangeError",
    "WallBayesError",
]
