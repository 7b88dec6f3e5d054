"""Exception hierarchy for cfustmix."""


class CfustError(Exception):
    """Base class for all package errors."""


class InputError(CfustError):
    """Bad user input (dimensions, files, flags). Maps to CLI exit code 2."""


class NumericalError(CfustError):
    """Numerical breakdown during fitting. Maps to CLI exit code 3."""


class DimensionMismatch(InputError):
    pass


class NotPositiveDefinite(NumericalError):
    pass


class InvalidProportions(InputError):
    pass


class InvalidDof(InputError):
    pass


class DomainError(InputError):
    pass


class DofTooSmall(InputError):
    pass


class CountMismatch(InputError):
    pass


class TooFewPoints(InputError):
    pass


class ClusterTooSmall(NumericalError):
    pass


class InitFailure(NumericalError):
    pass


class ComponentStarvation(NumericalError):
    def __init__(self, component, n_eff, needed, partial=None):
        super().__init__(
            f"component {component + 1} starved: effective size {n_eff:.3g} < {needed}"
        )
        self.component = component
        self.n_eff = n_eff
        # FitResult carrying the loglik trace up to the failure, if any
        self.partial = partial


class SingularMoment(NumericalError):
    def __init__(self, component, partial=None):
        super().__init__(f"sum of e3 moments is singular for component {component + 1}")
        self.component = component
        self.partial = partial


class NumericalUnderflow(NumericalError):
    pass


class AllFitsFailed(NumericalError):
    pass


class ParseError(InputError):
    def __init__(self, message, row=None, col=None):
        super().__init__(message)
        self.row = row
        self.col = col


class EmptyFile(InputError):
    pass


class DataFileNotFound(InputError, FileNotFoundError):
    pass


class SchemaVersionMismatch(InputError):
    pass


class RangeInvalid(InputError):
    pass


class BudgetExceededWarning(RuntimeWarning):
    """Quadrature stopped at max_points without reaching abs_tol."""
