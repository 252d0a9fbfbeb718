"""Exception types shared across the service modules."""


class RadAssistError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(RadAssistError):
    """Caller supplied a value that violates a documented precondition."""


class UnknownLabelError(InvalidInputError):
    """A label identifier is not part of the model configuration."""


class NotFoundError(RadAssistError):
    """A model, owner, version, or study does not exist."""


class ConflictError(RadAssistError):
    """Operation conflicts with current state (double seed, illegal transition, busy lineage)."""


class UndefinedMetricError(RadAssistError):
    """A metric is undefined for the given inputs (e.g. single-class AUC)."""
