"""
Error hierarchy shared by every fcl_sim module.

Validation problems derive from ``ValueError`` so callers that only know the
stdlib contract still catch them.
"""


class FCLError(Exception):
    """Base class for all fcl_sim errors."""


class ValidationError(FCLError, ValueError):
    """An argument, config value or input shape is invalid."""


class ShapeError(ValidationError):
    """A tensor dimension does not chain into the named layer."""

    def __init__(self, message: str, layer: str = None):
        self.layer = layer
        if layer:
            message = f"{layer}: {message}"
        super().__init__(message)


class ArchitectureMismatchError(ValidationError):
    pass


class DegenerateEmbeddingError(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class InfeasiblePartitionError(ValidationError):
    pass


class EmptyBankError(ValidationError):
    pass


class ColdStartError(ValidationError):
    """No other device has uploaded features yet."""


class SchemaError(ValidationError):
    def __init__(self, message: str, path: str = None):
        self.path = path
        if path:
            message = f"{path}: {message}"
        super().__init__(message)


class IntegrityError(FCLError):
    """An uploaded feature claims an origin other than its uploader."""


class PolicyViolationError(FCLError):
    """A device's own features reached its negatives under remote_only."""


class DataFormatError(FCLError):
    def __init__(self, message: str, path: str = None):
        self.path = path
        if path:
            message = f"{path}: {message}"
        super().__init__(message)
