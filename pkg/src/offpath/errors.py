"""Exception and warning types shared across the package."""


class OffpathError(Exception):
    """Base class for all package errors."""


class ConfigError(OffpathError, ValueError):
    """A hardware profile violates one of its invariants."""


class NonPositiveCapacity(ConfigError):
    pass


class BadMtu(ConfigError):
    pass


class EmptySkewTable(ConfigError):
    pass


class UnsupportedVerbForPath(OffpathError, ValueError):
    pass


class ParseError(OffpathError, ValueError):
    """Malformed structured text; ``lineno`` is 1-based when known."""

    def __init__(self, message, lineno=None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class ValidationError(OffpathError, ValueError):
    pass


class MissingColumn(ParseError):
    pass


class NotComparable(OffpathError, ValueError):
    pass


class NegativeRatio(OffpathError, ValueError):
    pass


class InvalidCapacities(OffpathError, ValueError):
    pass


class UnknownAlternative(OffpathError, KeyError):
    pass


class Infeasible(OffpathError, ValueError):
    pass


class EmptyRange(OffpathError, ValueError):
    pass


class Underdetermined(UserWarning):
    """Some links have no fixture constraining their efficiency."""
