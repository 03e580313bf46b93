"""Exception taxonomy shared by every module in the engine."""


class TtaError(Exception):
    """Base class for all engine errors."""


class ShapeError(TtaError):
    """Operands have missing or incompatible dimensions."""


class NumericError(TtaError):
    """Non-finite values or otherwise invalid numeric input."""


class DegenerateVectorError(NumericError):
    """A vector's norm is too close to zero to normalize."""


class DomainError(TtaError):
    """Value lies outside the mathematical domain of an operation."""


class RangeError(TtaError):
    """Index, count, or step outside its permitted range."""


class FormatError(TtaError):
    """A binary file does not match its expected layout."""


class CorruptionError(FormatError):
    """A binary file is truncated or its size disagrees with its header."""


class SchemaError(TtaError):
    """Manifest JSON is missing fields, carries unknown ones, or is malformed."""


class ConsistencyError(TtaError):
    """Cross-file invariants of a manifest do not hold."""


class ParameterError(TtaError):
    """A configuration value or operation parameter is invalid."""


class EmptySupportError(TtaError):
    """An operation that needs support samples received none."""
