"""Exception types shared across the toolkit."""


class PartkitError(Exception):
    """Base class for all toolkit errors."""


class InputError(PartkitError):
    """Caller supplied an invalid value (bad composition, bad image, ...)."""


class ConfigError(PartkitError):
    """A configuration value cannot be honored (unknown layer, K too large, ...)."""


class StateError(PartkitError):
    """Operation requires state that is missing or not yet fitted/loaded."""


class BackendError(PartkitError):
    """A pluggable backend (feature extractor, denoiser) failed."""


class NumericError(PartkitError):
    """Non-finite values where finite ones are required."""


class InternalError(PartkitError):
    """Inconsistency that indicates a bug rather than bad input."""
