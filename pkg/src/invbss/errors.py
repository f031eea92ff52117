"""Exception hierarchy shared by every stage of the pipeline."""


class BSSError(Exception):
    """Base class for all errors raised by this package."""


class SeriesFormatError(BSSError):
    """A series file could not be parsed."""

    def __init__(self, message, row=None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class NonFiniteError(SeriesFormatError):
    def __init__(self, row):
        super().__init__("non-finite value", row=row)


class NonUniformSamplingError(SeriesFormatError):
    pass


class SeriesTooShortError(BSSError):
    pass


class AllCellsDroppedError(BSSError):
    pass


class InsufficientSamplesError(BSSError):
    pass


class QuadratureError(BSSError):
    pass


class SingularCovarianceError(BSSError):
    """Velocity covariance of a cell is not positive definite."""


class MissingOrderError(BSSError):
    pass


class TooFewInvariantsError(BSSError):
    pass


class DegenerateCloudError(BSSError):
    pass


class DisconnectedGraphError(BSSError):
    pass


class EmptyCorrespondenceError(BSSError):
    pass


class InsufficientVariationError(BSSError):
    pass


class BudgetExceededError(BSSError):
    pass


class NyquistError(BSSError):
    pass


class ClippingError(BSSError):
    pass


class JacobianError(BSSError):
    pass


class DimensionMismatchError(BSSError):
    """Data do not lie on a manifold of the requested dimension."""

    def __init__(self, message, intrinsic_dim=None, residual=None):
        self.intrinsic_dim = intrinsic_dim
        self.residual = residual
        super().__init__(message)


class ConfigError(BSSError):
    pass
