"""Exception types shared across the package."""


class MetaLaLabError(Exception):
    """Base class for all package errors."""


class ShapeError(MetaLaLabError):
    """Tensor dimensions are incompatible with the requested operation."""


class ConfigError(MetaLaLabError):
    """A spec, config file, or weight set is internally inconsistent."""


class InputError(MetaLaLabError):
    """User-provided data violates a precondition (bad distribution, OOV id, ...)."""


class NumericalError(MetaLaLabError):
    """A numerical-domain violation in verification mode (tiny divisor, decay floor)."""


class InvariantError(MetaLaLabError):
    """A runtime invariant was violated (e.g. decay outside [0, 1])."""
