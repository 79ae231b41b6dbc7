"""Exception hierarchy shared across the package."""


class ErrsurvError(Exception):
    """Base class for all package errors."""


class ValidationError(ErrsurvError):
    """Input data or configuration violates a documented contract."""


class NonmonotoneVisits(ValidationError):
    pass


class CovariateDriftWithinSubject(ValidationError):
    pass


class MissingCalibrationMeasure(ValidationError):
    pass


class EmptyCohort(ValidationError):
    pass


class GridMismatch(ValidationError):
    pass


class ModeMismatch(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class SubsetTooSmall(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class NumericalError(ErrsurvError):
    """A numerical procedure could not produce a usable answer."""


class BoundViolation(NumericalError):
    pass


class InfeasibleStart(NumericalError):
    pass


class SingularHessian(NumericalError):
    pass


class SingularDelta(NumericalError):
    pass


class RankDeficient(NumericalError):
    pass


RankDeficientDesign = RankDeficient


class ConvergenceError(NumericalError):
    """Raised by callers that require a converged fit."""


class NonPositiveLikelihoodTerm(RuntimeWarning):
    """A subject's likelihood contribution is not positive at this point."""
