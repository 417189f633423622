"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ConfigError(ValueError):
    """A configuration value or file is malformed or out of range."""


class NumericError(ArithmeticError):
    """A numerical computation produced non-finite or unusable values."""
