"""Exception types shared across the package."""


class L2MError(Exception):
    """Base class for all package errors."""


class ConfigError(L2MError, ValueError):
    """Invalid configuration or parameter range."""


class DomainError(L2MError, ValueError):
    """Input outside the mathematical domain of an operation."""


class InputError(L2MError, ValueError):
    """Mismatched or malformed input data."""


class InpaintError(L2MError):
    """Inpainting could not produce a result."""


class InpaintHookError(InpaintError):
    """External inpainting command failed."""

    def __init__(self, message, stderr=""):
        super().__init__(message if not stderr else f"{message}\n{stderr}")
        self.stderr = stderr


class EstimationError(L2MError):
    """Robust or linear model estimation failed."""


class DecompositionError(EstimationError):
    """No essential-matrix decomposition passes the cheirality test."""


class FormatError(L2MError, ValueError):
    """Binary or text file does not match its declared format."""
