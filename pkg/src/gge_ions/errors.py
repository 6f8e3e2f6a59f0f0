"""Exception types raised by the solvers."""


class GgeIonsError(Exception):
    """Base class for all package errors."""


class NumericalError(GgeIonsError):
    """A numerical routine failed; the CLI maps these to exit code 3."""


class ConfigError(GgeIonsError, ValueError):
    """Invalid configuration or parameters; CLI exit code 2."""


class SupportTooLarge(ConfigError):
    pass


class NonHermitianInput(ConfigError):
    pass


class DegenerateSteadyState(NumericalError):
    """The Liouvillian (or projected generator) has more than one null vector."""

    def __init__(self, message, singular_values=None):
        super().__init__(message)
        self.singular_values = singular_values


class NoConvergence(NumericalError):
    def __init__(self, message, best_residual=None):
        super().__init__(message)
        self.best_residual = best_residual


class SingularJacobian(NumericalError):
    pass


class CommutatorViolation(NumericalError):
    pass


class IllConditionedProjection(NumericalError):
    pass


class TargetOutOfRange(NumericalError, ValueError):
    pass


class ImaginaryResidue(NumericalError):
    pass


class ThermalDenominatorNearZero(NumericalError):
    def __init__(self, message, difference=None):
        super().__init__(message)
        self.difference = difference


class StepSizeUnderflow(NumericalError):
    pass


class CutoffLeakage(NumericalError):
    def __init__(self, message, leakage=None):
        super().__init__(message)
        self.leakage = leakage


class SingularBlock(NumericalError):
    pass
