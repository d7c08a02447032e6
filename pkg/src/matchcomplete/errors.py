"""Exception hierarchy; each family maps to a CLI exit code."""


class MatchCompleteError(Exception):
    exit_code = 1


class ConfigError(MatchCompleteError, ValueError):
    exit_code = 2


class DataError(MatchCompleteError, ValueError):
    exit_code = 3


class NumericalError(MatchCompleteError, ArithmeticError):
    exit_code = 4
