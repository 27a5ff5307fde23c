"""Exception hierarchy. Each error carries the CLI exit code it maps to."""


class FixpoolError(Exception):
    exit_code = 1


class ConfigError(FixpoolError, ValueError):
    exit_code = 2


class ShotCountError(ConfigError):
    """Requested shots exceed the per-class budget, or a pool has the wrong shot count."""


class BudgetError(ConfigError):
    """Support plus query examples exceed what a class can provide."""


class DimensionMismatchError(ConfigError):
    pass


class DataFormatError(FixpoolError, OSError):
    exit_code = 3


class DegeneracyError(FixpoolError, ArithmeticError):
    exit_code = 4


class DivergenceError(DegeneracyError):
    pass
