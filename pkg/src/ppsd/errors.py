"""Exception hierarchy shared across the package."""


class PPSDError(Exception):
    """Base class for all package errors."""


class InvalidArgument(PPSDError, ValueError):
    pass


class GenerationFailure(PPSDError, RuntimeError):
    pass


class InvariantViolation(PPSDError):
    pass


class DegenerateProblem(PPSDError, ValueError):
    pass


class ResampleRequired(PPSDError):
    """A shadow construction hit a denominator below the safety floor."""


class AuditInconclusive(PPSDError):
    pass


class AuditPreconditionError(InvalidArgument):
    """The requested audit violates the adversary-set or channel preconditions."""


class InsufficientInformation(PPSDError):
    pass


class FitUndefined(PPSDError, ValueError):
    pass


class ConstantsIntractable(PPSDError):
    """Theory constants exceed the cap; ``report`` holds the advisor report if any."""

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class AdvisoryEmpty(PPSDError):
    """No step size in the scanned range certifies ``rho(U) < 1``."""

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class ConfigError(PPSDError, ValueError):
    pass
