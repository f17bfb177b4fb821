"""Exception types shared across the package."""


class SteerError(Exception):
    """Base class for all package errors."""


class ContractError(SteerError, ValueError):
    """An operation was called with arguments that violate its contract."""


class DegenerateInputError(ContractError):
    """Input too small to process (tiny frame, sub-2x2 feature grid)."""


class ConfigError(ContractError):
    """Invalid configuration value or rejected control delta."""


class NotCalibratedError(SteerError, RuntimeError):
    """Standardization requested before enough calibration samples exist."""


class BackendError(SteerError, RuntimeError):
    """A model backend failed or violated its interface contract."""


class LayerMismatchError(BackendError):
    """A requested extractor layer is missing or has the wrong shape."""


class CapabilityError(BackendError):
    """The active mode needs a capability the generator does not advertise."""
