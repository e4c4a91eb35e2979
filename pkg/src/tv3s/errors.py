"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: configuration problems exit 2, I/O and
format problems exit 3, numeric failures exit 4.
"""


class TV3SError(Exception):
    exit_code = 1


class ConfigError(TV3SError, ValueError):
    exit_code = 2


class DimensionError(ConfigError):
    pass


class StateGeometryError(ConfigError):
    pass


class FormatError(TV3SError, OSError):
    exit_code = 3


class NumericError(TV3SError, ArithmeticError):
    exit_code = 4
