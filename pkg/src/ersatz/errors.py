"""Exception hierarchy. Every error carries a machine-parsable ``code``."""


class ErsatzError(Exception):
    code = "ersatz-error"
    exit_code = 2

    def __init__(self, message: str = ""):
        super().__init__(message or self.code)

    def __str__(self) -> str:
        return f"[{self.code}] {super().__str__()}"


class ValidationError(ErsatzError):
    code = "validation-error"
    exit_code = 2


class NumericalError(ErsatzError):
    code = "numerical-error"
    exit_code = 3


class InvalidDimension(ValidationError):
    code = "invalid-dimension"


class GridTooCoarse(ValidationError):
    code = "grid-too-coarse"


class StencilOutOfDomain(ValidationError):
    code = "stencil-out-of-domain"


class DimensionMismatch(ValidationError):
    code = "dimension-mismatch"


class InvalidParameter(ValidationError):
    code = "invalid-parameter"


class DecompositionInfeasible(NumericalError):
    code = "decomposition-infeasible"


class SearchFailed(NumericalError):
    code = "search-failed"


class EllipticityViolation(ValidationError):
    code = "ellipticity-violation"


class InvalidSpec(ValidationError):
    code = "invalid-spec"


class RefuseToStep(ValidationError):
    code = "refuse-to-step"


class DivergenceDetected(NumericalError):
    code = "divergence-detected"

    def __init__(self, message: str = "", step: int | None = None):
        super().__init__(message)
        self.step = step


class InsufficientData(ValidationError):
    code = "insufficient-data"


class MonotonicityCheckFailed(NumericalError):
    code = "monotonicity-check-failed"


class IncompatibleRefinement(ValidationError):
    code = "incompatible-refinement"


class InvalidRange(ValidationError):
    code = "invalid-range"


class CoefficientConditionsViolated(ValidationError):
    code = "coefficient-conditions-violated"


class ConfigError(ValidationError):
    code = "config-error"

    def __init__(self, message: str = "", line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class VerificationFailed(NumericalError):
    code = "verification-failed"
