"""Exception hierarchy.

Every error carries the process exit code the CLI uses for it:
2 for configuration problems, 3 for bad or missing data, 4 for numeric failures.
"""


class UbscError(Exception):
    exit_code = 1


class ConfigError(UbscError, ValueError):
    exit_code = 2


class DataError(UbscError, ValueError):
    exit_code = 3


class NumericError(UbscError, ArithmeticError):
    exit_code = 4


class UtteranceTooShort(DataError):
    pass


class EmptyUtterance(DataError):
    pass


class BadMagic(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class TruncatedFile(DataError):
    pass


class VersionMismatch(DataError):
    pass


class WrongModelKind(DataError):
    pass


class PoolTooSmall(DataError):
    pass


class NoImposters(DataError):
    pass
