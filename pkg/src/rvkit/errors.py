"""Exception types shared across the toolkit."""


class DegenerateInputError(ValueError):
    """Raised for inputs with no defined answer (origin, z-axis points)."""


class ShapeMismatchError(ValueError):
    """Raised when map shapes are inconsistent with each other."""


class ConfigError(ValueError):
    """Raised for invalid or unknown configuration content."""


class FormatError(RuntimeError):
    """Raised when a binary container fails to parse."""


class ConstraintError(RuntimeError):
    """Raised when a generation constraint cannot be satisfied."""
