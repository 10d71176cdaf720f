"""Exception types raised across the package."""


class DimensionError(ValueError):
    """Array shapes do not agree."""


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class StateError(RuntimeError):
    """An object is used before it is ready (e.g. uninitialized momentum, stale tape)."""


class ParseError(ValueError):
    """Malformed input file."""


class CheckpointError(ValueError):
    """Checkpoint cannot be read or does not match the requested model."""
