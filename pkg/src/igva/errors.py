"""Exception hierarchy shared across the package.

File-format problems keep distinct classes so callers (and tests) can tell
corruption modes apart; every format error can carry the byte offset at which
parsing failed.
"""

from __future__ import annotations


class IgvaError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(IgvaError, ValueError):
    """Operand shapes are incompatible with the requested operation."""


class ConfigError(IgvaError, ValueError):
    """A configuration value or combination of values is invalid."""


class ConfigFileError(ConfigError):
    """A config file failed to parse or validate; carries a line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DomainError(IgvaError, ValueError):
    """An input value lies outside the mathematical domain of an operation."""


class EmptyGroupError(IgvaError, ValueError):
    """An aggregation was requested over an empty collection."""


class EvaluationError(IgvaError, ArithmeticError):
    """An objective produced a non-finite value during gradient checking."""


class UnknownInstructionError(IgvaError, KeyError):
    """A lookup-table embedding provider has no entry for an instruction."""


class TrainingDivergedError(IgvaError, RuntimeError):
    """Training loss exceeded the divergence threshold; carries the trace."""

    def __init__(self, message: str, trace: list[float] | None = None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []


class ReportingError(IgvaError, ValueError):
    """A report was requested over data that cannot support it."""


class FormatError(IgvaError, ValueError):
    """Base class for binary/text file format violations."""

    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)


class MagicError(FormatError):
    """The file does not start with the expected magic bytes."""


class TruncatedError(FormatError):
    """The file ended before a declared field or payload was complete."""


class TrailingBytesError(FormatError):
    """Extra bytes follow the last declared entry."""


class DuplicateNameError(FormatError):
    """Two entries in one archive share a name."""


class InvalidEntryError(FormatError):
    """An entry header is malformed (bad rank, undecodable name, absurd dims)."""


class MissingEntryError(FormatError):
    """A schema-required named tensor is absent from an archive."""


class EntryShapeError(FormatError):
    """A named tensor is present but its shape contradicts the schema."""
