"""Exception types shared across the package."""


class TranscalError(Exception):
    """Base class for package errors."""


class ConfigError(TranscalError, ValueError):
    """Invalid or inconsistent configuration."""


class NumericalError(TranscalError, RuntimeError):
    """A numerical routine could not produce a usable result."""


class GpFitError(NumericalError):
    """Kernel matrix stayed singular after nugget escalation."""


class McmcError(NumericalError):
    """The sampler could not start or got stuck."""


class SupportError(NumericalError):
    """Importance weights vanished: the prior supports do not coincide."""
