"""Exception types shared across the package."""


class EcosError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(EcosError, ValueError):
    """A caller-supplied argument violates an operation's preconditions."""


class DataFormatError(EcosError, ValueError):
    """An on-disk file or wire message is malformed or internally inconsistent."""


class NonPrivateError(EcosError):
    """The mechanism has no finite privacy guarantee (sigma == 0)."""


class BoundValidityError(ValidationError):
    """Requested parameters fall outside the closed-form bound's validity range."""
