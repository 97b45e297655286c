"""Exception hierarchy shared by every package.

Most errors subclass ValueError so callers that catch ValueError keep working.
"""
from typing import Optional


class ProCalError(Exception):
    """Base class for all library errors."""


class InvalidInputError(ProCalError, ValueError):
    """Raised for non-finite values or vectors that are not on the simplex."""


class DegenerateFeatureError(ProCalError, ValueError):
    """Raised when a feature vector is too close to zero to normalize."""


class ShapeError(ProCalError, ValueError):
    """Raised on dimension mismatches between arrays, params and datasets."""


class ParameterError(ProCalError, ValueError):
    """Raised when a hyperparameter or argument is out of range."""


class InsufficientDataError(ProCalError, ValueError):
    """Raised when there are too few samples for the requested operation."""


class WriteOnceError(ProCalError, RuntimeError):
    """Raised on a second write to a write-once field."""


class GenerationError(ProCalError, RuntimeError):
    """Raised when synthetic data generation cannot satisfy its constraints."""


class ConfigError(ProCalError, ValueError):
    """Raised for invalid experiment configuration."""


class FeatureTableParseError(ProCalError, ValueError):
    """
    Raised when a feature-table CSV violates the file contract.

    Attributes:
        line: 1-based line number of the offending line.
    """

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class DivergenceError(ProCalError, ArithmeticError):
    """
    Raised when training produces a non-finite loss or gradient.

    Attributes:
        iteration: Iteration at which divergence was detected.
        last_good: Last parameters known to be finite, if any.
    """

    def __init__(self, message: str, iteration: int = -1, last_good: Optional[object] = None):
        super().__init__(message)
        self.iteration = iteration
        self.last_good = last_good
