"""Simulator for soft-clustered personalized decentralized federated learning."""

__version__ = "0.1.0"

from .errors import (ConfigError, ConfigSyntaxError, ConfigValidationError, DivergenceError, GenerationError,
                     InvalidParameterError, NotApplicableError, ProtocolError, UndefinedRateError,
                     UnknownKeyError)
from .rng import Streams

__all__ = [
    "__version__", "Streams", "ConfigError", "ConfigSyntaxError", "ConfigValidationError", "DivergenceError",
    "GenerationError", "InvalidParameterError", "NotApplicableError", "ProtocolError", "UndefinedRateError",
    "UnknownKeyError",
]
