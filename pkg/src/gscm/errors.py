"""Exception hierarchy.

Every error raised by the package derives from :class:`GSCMError`. The two
intermediate classes, :class:`ConfigError` and :class:`DataValidationError`,
decide the exit code used by the command-line front end.
"""


class GSCMError(Exception):
    """Base class for all package errors."""


class ConfigError(GSCMError, ValueError):
    """Invalid run configuration (missing files, bad options)."""


class DataValidationError(GSCMError, ValueError):
    """Input data violates a structural or numerical requirement."""


class ConvergenceError(GSCMError, RuntimeError):
    """Raised when chains fail the convergence check."""


# graph
class SelfLoopError(DataValidationError):
    pass


class DuplicateEdgeError(DataValidationError):
    pass


class IsolatedAreaError(DataValidationError):
    pass


class IndexOutOfRangeError(DataValidationError, IndexError):
    pass


class DegenerateLatticeError(DataValidationError):
    pass


class NotConnectedError(DataValidationError):
    pass


# densities and model
class DimensionMismatchError(DataValidationError):
    pass


class RhoOutOfRangeError(DataValidationError):
    pass


class NonPositiveScaleError(DataValidationError):
    pass


class NonFiniteDensityError(GSCMError, FloatingPointError):
    pass


# sampler and diagnostics
class InitializationFailure(GSCMError, RuntimeError):
    pass


class InsufficientDrawsError(GSCMError, ValueError):
    pass


class TooFewDrawsError(InsufficientDrawsError):
    pass


# indices
class RequiresTwoFactorsError(ConfigError):
    pass


class NonPositivePopulationError(DataValidationError):
    pass


class UnlabelledAreaError(DataValidationError):
    pass


# transforms and exploration
class ProportionOutOfRangeError(DataValidationError):
    pass


class NonPositiveSEError(DataValidationError):
    pass


class DegenerateFeatureError(DataValidationError):
    pass


class ConstantFeatureError(DataValidationError):
    pass
