"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class AmsError(Exception):
    exit_code = 1
    tag = "error"


class ConfigError(AmsError, ValueError):
    exit_code = 2
    tag = "config"


class ValidationError(AmsError, ValueError):
    """Bad input values (ranges, labels, non-finite numbers)."""

    exit_code = 3
    tag = "data"


class DimensionError(ValidationError):
    pass


class DataError(ValidationError):
    """Malformed dataset or checkpoint file."""


class ContractViolation(AmsError, RuntimeError):
    exit_code = 4
    tag = "contract"


class NumericError(AmsError, ArithmeticError):
    exit_code = 4
    tag = "numeric"
