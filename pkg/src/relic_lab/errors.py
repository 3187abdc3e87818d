"""Exception hierarchy shared by every module."""


class RelicError(Exception):
    """Base class for all errors raised by relic_lab."""


class ShapeError(RelicError, ValueError):
    """Operand shapes do not conform."""


class DomainError(RelicError, ValueError):
    """An operand lies outside an operation's domain, or a result is not finite."""


class ContractError(RelicError, ValueError):
    """A documented precondition was violated."""


class StateError(RelicError, RuntimeError):
    """An object was used in a state that forbids the call."""


class ConfigError(RelicError, ValueError):
    """Configuration is invalid or names something unknown."""

    def __init__(self, message, keys=()):
        super().__init__(message)
        self.keys = tuple(keys)


class FormatError(RelicError, IOError):
    """A serialized file is malformed. ``offset`` is the byte position, when known."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class AbortStepError(RelicError, FloatingPointError):
    """An optimizer step was refused because a gradient was not finite."""

    def __init__(self, message, layer_index):
        super().__init__(message)
        self.layer_index = layer_index
