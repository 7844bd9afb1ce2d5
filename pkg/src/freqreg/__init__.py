"""GPU-server frequency regulation: signals, power model, controller, market,
grid-side carbon and cost accounting."""

from .errors import ConfigError, InfeasibleError, ParameterError, ParseError, ValidationError

__version__ = "0.1.0"

__all__ = ["ConfigError", "InfeasibleError", "ParameterError", "ParseError",
           "ValidationError", "__version__"]
