"""Exception hierarchy. ``exit_code`` is what the CLI returns for each class."""


class UnobsError(Exception):
    exit_code = 1


class InputError(UnobsError, ValueError):
    """Bad input: shapes, formats, configuration."""

    exit_code = 2


class FormatError(InputError):
    pass


class TruncationError(FormatError):
    pass


class DataError(InputError):
    pass


class ShapeError(InputError):
    pass


class ConfigError(InputError):
    pass


class DependencyError(UnobsError):
    """A required upstream artifact (checkpoint) is missing."""

    exit_code = 3


class DomainError(UnobsError, ArithmeticError):
    """The math is undefined for this input."""

    exit_code = 4


class DegenerateSSFError(DomainError):
    pass


class ConditioningError(DomainError):
    pass


class NumericGuardError(DomainError):
    pass


class UndefinedMetricError(DomainError):
    pass


class UnusableIlluminantError(DomainError):
    pass


class ZeroGainError(DomainError):
    pass


class DivergenceError(DomainError):
    pass


class TapeError(UnobsError, RuntimeError):
    pass


class FrozenError(UnobsError, RuntimeError):
    """Attempt to modify or differentiate a frozen network."""
