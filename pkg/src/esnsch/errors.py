"""Exception hierarchy shared by all modules."""


class EsnschError(Exception):
    """Base class for every error raised by the package."""


class ValidationFailure(EsnschError):
    """Input or configuration rejected before any numerics ran."""


class NumericalFailure(EsnschError):
    """A numerical procedure failed to produce a trustworthy result."""


# geometry
class DegenerateGradient(NumericalFailure):
    pass


class NoConvergence(NumericalFailure):
    pass


class GammaTooLarge(ValidationFailure):
    pass


# mesh motion
class LevelOutOfRange(ValidationFailure):
    pass


class MeshQualityDegraded(NumericalFailure):
    pass


class ProjectionFailed(NumericalFailure):
    pass


class DegenerateElement(NumericalFailure):
    pass


class MeshError(ValidationFailure):
    """Mesh is not watertight, not oriented, or otherwise malformed."""


# forms
class MeshMismatch(ValidationFailure):
    pass


class ViscosityNonPositive(ValidationFailure):
    pass


# potentials
class DomainViolation(NumericalFailure):
    pass


# elliptic operators
class IncompatibleData(ValidationFailure):
    pass


class NonZeroMean(ValidationFailure):
    pass


class SolverFailure(NumericalFailure):
    pass


class EigenSolverFailure(NumericalFailure):
    pass


# time stepping
class InadmissibleInitialData(ValidationFailure):
    pass


class NewtonDivergence(NumericalFailure):
    pass


class PhaseBoundViolation(NumericalFailure):
    pass


class LinearSolverFailure(NumericalFailure):
    pass


# diagnostics
class MeanMismatch(ValidationFailure):
    pass


class OutOfDomain(NumericalFailure):
    pass


class ZeroDenominator(NumericalFailure):
    pass


# io
class ParseError(ValidationFailure):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConfigValidationError(ValidationFailure):
    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class FormatError(ValidationFailure):
    pass
