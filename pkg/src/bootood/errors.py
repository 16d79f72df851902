"""Exception hierarchy.

Every error carries an ``exit_code`` so the CLI can map failures onto
0 success / 1 config / 2 runtime-numerical / 3 IO without a lookup table.
"""


class BootOODError(Exception):
    exit_code = 2


class ConfigError(BootOODError, ValueError):
    exit_code = 1


class NumericalError(BootOODError, ArithmeticError):
    exit_code = 2


class DataIOError(BootOODError, OSError):
    exit_code = 3


class ZeroNormError(NumericalError):
    pass


class NonFiniteError(NumericalError):
    pass


class NonFiniteLossError(NumericalError):
    def __init__(self, iteration, message=None):
        self.iteration = iteration
        super().__init__(message or f"non-finite loss at iteration {iteration}")


class DimensionMismatchError(BootOODError, ValueError):
    pass


class NonPositiveAlphaError(ConfigError):
    pass


class InvalidKError(ConfigError):
    pass


class NonPositiveClipError(ConfigError):
    pass


class EmptyBatchError(BootOODError, ValueError):
    pass


class BatchTooSmallError(EmptyBatchError):
    pass


class LabelOutOfRangeError(BootOODError, ValueError):
    pass


class EmptyScoreSetError(BootOODError, ValueError):
    pass


class ClassTooSmallError(BootOODError, ValueError):
    pass


class CorruptHeaderError(DataIOError):
    pass


class DimMismatchError(DataIOError):
    pass
