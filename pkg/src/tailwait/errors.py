"""Exception hierarchy; the CLI maps each class to an exit code."""


class TailwaitError(Exception):
    exit_code = 1


class ConfigError(TailwaitError, ValueError):
    exit_code = 2


class DataError(TailwaitError, ValueError):
    exit_code = 3


class NumericalError(TailwaitError, ArithmeticError):
    exit_code = 4
