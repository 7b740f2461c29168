"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class FrameworkError(Exception):
    exit_code = 1


class ConfigError(FrameworkError):
    exit_code = 2


class DataError(FrameworkError):
    exit_code = 3


class NumericError(FrameworkError):
    exit_code = 4


class ContractError(FrameworkError):
    exit_code = 5


class ShapeError(ContractError):
    pass


class UnknownBackboneError(ConfigError, KeyError):
    def __str__(self):  # KeyError quotes its message otherwise
        return Exception.__str__(self)
