"""Exception types raised across the package."""


class OtfsError(Exception):
    """Base class for all package errors."""


class InvalidDimensionError(OtfsError, ValueError):
    pass


class UnsupportedModulationError(OtfsError, ValueError):
    pass


class InvalidPathError(OtfsError, ValueError):
    pass


class SingularChannelError(OtfsError, ArithmeticError):
    pass


class NumericalFailureError(OtfsError, ArithmeticError):
    pass


class TrainingDivergenceError(OtfsError, ArithmeticError):
    pass


class InvalidHistoryError(OtfsError, ValueError):
    pass


class OptimizationFailureError(OtfsError, ArithmeticError):
    pass


class ConfigError(OtfsError, ValueError):
    pass
