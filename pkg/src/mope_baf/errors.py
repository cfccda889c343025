"""Exception types shared across the package."""


class MopeBafError(Exception):
    """Base class for all package errors."""


class ShapeError(MopeBafError):
    """Tensor dimensions incompatible with the requested operation."""


class InputError(MopeBafError):
    """Caller-supplied data is invalid (bad token id, bad label, bad length)."""


class ConfigError(MopeBafError):
    """Configuration violates a cross-field invariant."""


class NumericError(MopeBafError):
    """A non-finite value appeared where a finite one is required."""
