"""Exception types shared across the toolkit."""


class ObstakitError(Exception):
    """Base class for all toolkit errors."""


class NotSPDError(ObstakitError):
    """Raised when a matrix expected to be symmetric positive definite is not."""


class ConvergenceError(ObstakitError):
    """Raised when an iterative solver fails to converge.

    Carries the last iterate and residual so callers can inspect the
    failure instead of guessing from the message.
    """

    def __init__(self, message, iterate=None, residual=None, history=None):
        super().__init__(message)
        self.iterate = iterate
        self.residual = residual
        self.history = history


class DegenerateAngleError(ObstakitError):
    """Raised when two subspaces touch (minimal-angle cosine at or above 1)."""

    def __init__(self, message, c0=None):
        super().__init__(message)
        self.c0 = c0


class ConfigError(ObstakitError):
    """Raised for malformed or inconsistent CLI / config input."""
