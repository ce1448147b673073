"""Exception types shared across the package."""


class LaneGameError(Exception):
    """Base class for all package errors."""


class InvalidInputError(LaneGameError):
    """A numeric input was non-finite or otherwise malformed."""


class ContractViolationError(LaneGameError):
    """An operation was called outside its precondition (e.g. stepping a
    terminal state or optimizing an empty batch)."""


class ConfigError(LaneGameError):
    """Configuration failed validation; the message names the offending key."""


class CheckpointError(LaneGameError):
    """A policy checkpoint could not be read; the message names the file and
    byte offset where parsing failed."""
