"""Exception hierarchy shared by all anosovlab modules."""


class LabError(Exception):
    """Base class for every error raised by anosovlab."""


class ConfigError(LabError):
    def __init__(self, path, reason):
        self.path = path
        self.reason = reason
        super().__init__(f"{path}: {reason}" if path else reason)


class NumericalError(LabError):
    """Numerical non-convergence; the CLI maps these to exit code 2."""


class InvariantViolation(LabError):
    """A runtime invariant check failed; the CLI maps these to exit code 3."""


class PointOutsideDisk(LabError, ValueError):
    pass


class StepFailure(NumericalError):
    pass


class RiccatiBlowup(NumericalError):
    pass


class NoConvergence(NumericalError):
    pass


class NoClosure(NumericalError):
    pass


class DegenerateOrbit(NumericalError):
    pass


class EmptyWindow(NumericalError):
    pass


class FitFailure(NumericalError):
    pass


class Overflow(LabError):
    pass


class OrbitEnumerationOverflow(Overflow):
    pass


class BallTooLarge(Overflow):
    pass


class OutOfDomain(LabError, ValueError):
    pass


class Aliasing(LabError, ValueError):
    pass


class NotZeroSum(LabError, ValueError):
    pass


class RejectionBudgetExceeded(NumericalError):
    pass


class InvalidGroup(InvariantViolation):
    pass


class InvalidModel(InvariantViolation):
    pass
