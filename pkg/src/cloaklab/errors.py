"""Exception types shared across the package."""


class CloakLabError(Exception):
    """Base class for all cloaklab errors."""


class ValidationError(CloakLabError):
    """Bad inputs, malformed files, or missing prerequisites (CLI exit 1)."""


class NumericalError(CloakLabError):
    """Non-finite values or diverging optimization (CLI exit 2)."""
