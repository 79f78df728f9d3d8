"""Exception hierarchy.

Data problems derive from :class:`DataError`, numerical failures from
:class:`NumericalError`; the CLI maps the two groups to distinct exit codes.
"""


class TwoPhaseError(Exception):
    """Base class for all errors raised by this package."""


class DataError(TwoPhaseError, ValueError):
    pass


class NumericalError(TwoPhaseError, ArithmeticError):
    pass


class StratumCountMismatch(DataError):
    pass


class MissingPayload(DataError):
    pass


class EmptyStratum(DataError):
    pass


class DegenerateStratum(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class VariantRequiresWeights(DataError):
    pass


class Collinear(DataError):
    pass


class TooLarge(DataError):
    pass


class TooFewReplicates(DataError):
    pass


class NoEvents(DataError):
    pass


class SingularJacobian(NumericalError):
    pass


class NoConvergence(NumericalError):
    def __init__(self, message, residual_norm=float("nan")):
        super().__init__(message)
        self.residual_norm = residual_norm


class Nonconvergence(NumericalError):
    pass


class SeparationDetected(NumericalError):
    pass


class SingularInformation(NumericalError):
    pass


class SingularMoment(NumericalError):
    pass


class TooManyFailures(NumericalError):
    pass
