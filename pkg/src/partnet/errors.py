"""Exception hierarchy shared by all partnet modules."""


class PartnetError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(PartnetError):
    """Operand shapes are incompatible for the requested operation."""


class ConfigError(PartnetError):
    """A configuration value is out of range or unsupported."""


class DataError(PartnetError):
    """Input data violates a documented contract (bad label, not one-hot, ...)."""


class FormatError(PartnetError):
    """A serialized file does not conform to its binary format."""


class NumericError(PartnetError):
    """A numeric kernel produced or received non-finite values."""


class UsageError(PartnetError):
    """An operation was called in an invalid state (missing cache, empty input)."""
