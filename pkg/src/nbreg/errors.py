"""Exception hierarchy shared across the package."""


class NBRegError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(NBRegError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ConfigError(NBRegError, ValueError):
    """A configuration object or option combination is invalid."""


class NumericError(NBRegError, ArithmeticError):
    """A computation produced a non-finite or otherwise unusable value."""


class ParseError(NBRegError, ValueError):
    """An input file could not be parsed; the message names line/column."""
