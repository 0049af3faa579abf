"""Exception hierarchy.

Every error carries the CLI exit code it maps to: 1 for configuration
problems, 2 for data problems, 3 for numerical degeneracy.
"""


class IVError(Exception):
    exit_code = 1


class ConfigError(IVError):
    exit_code = 1


class UnsupportedAlphaError(ConfigError):
    pass


class PreconditionError(ConfigError):
    pass


class DataError(IVError):
    exit_code = 2


class ParseError(DataError):
    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class CollinearityError(DataError):
    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)


class DegreesOfFreedomError(DataError):
    pass


class ClusterCountError(DataError):
    pass


class NumericalError(IVError):
    exit_code = 3


class DegenerateFirstStageError(NumericalError):
    pass


class SingularVCovError(NumericalError):
    pass


class BootstrapInstabilityError(NumericalError):
    pass
