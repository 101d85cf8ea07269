"""Exception hierarchy shared by all modules."""


class HierTMLEError(Exception):
    """Base class for every error raised by the package."""


class ConfigError(HierTMLEError):
    pass


class ParseError(HierTMLEError):
    pass


class SchemaError(HierTMLEError):
    pass


class InvariantError(HierTMLEError):
    pass


class OutcomeOutOfBounds(InvariantError):
    pass


class WeightError(InvariantError):
    pass


class DegenerateSupport(HierTMLEError):
    pass


class UnfittedReference(HierTMLEError):
    pass


class UnsupportedValue(HierTMLEError):
    pass


class DimensionMismatch(HierTMLEError):
    pass


class InsufficientData(HierTMLEError):
    pass


class NonConvergence(HierTMLEError):
    pass


class EstimationError(HierTMLEError):
    """Raised when the targeting step cannot proceed (e.g. every weight is zero)."""


class AllWeightsZero(EstimationError):
    pass


class MismatchedRuns(HierTMLEError):
    pass


class SpecError(ConfigError):
    pass
