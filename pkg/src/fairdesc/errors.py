"""Exception types shared across the package.

Every error carries a short machine-parsable ``code`` that the CLI prints as
``error[<code>]: <message>`` on a single line before exiting nonzero.
"""


class FairdescError(Exception):
    """Base class for all package errors."""

    code = "internal"


class ShapeError(FairdescError):
    code = "shape"


class ConfigError(FairdescError):
    code = "config"


class LabelError(FairdescError):
    code = "label"


class SpecError(FairdescError):
    """Invalid synthetic-data specification."""

    code = "spec"


class SplitError(FairdescError):
    code = "split"


class MappingError(FairdescError):
    code = "mapping"


class IoError(FairdescError):
    code = "io"


class FormatError(FairdescError):
    """Base class for descriptor/checkpoint file format errors."""

    code = "format"


class BadMagicError(FormatError):
    code = "bad-magic"


class VersionError(FormatError):
    code = "bad-version"


class TruncationError(FormatError):
    code = "truncated"


class LabelCountError(FormatError):
    code = "label-count"


class ScoringError(FairdescError):
    code = "scoring"


class ProtocolError(FairdescError):
    code = "protocol"


class BpcUndefinedError(FairdescError):
    """Raised when the trade-off coefficient has a zero denominator."""

    code = "bpc-undefined"
