"""Exception and warning types used across the package."""


class DteBoundsError(Exception):
    """Base class for all package errors."""


# panel ingestion
class MissingColumn(DteBoundsError):
    pass


class NonBinaryTreatment(DteBoundsError):
    pass


class NoVariationInTreatment(DteBoundsError):
    pass


class NonNumericOutcome(DteBoundsError):
    pass


# empirical distributions
class EmptySample(DteBoundsError):
    pass


class TauOutOfRange(DteBoundsError):
    pass


class LengthMismatch(DteBoundsError):
    pass


class DegenerateVariance(DteBoundsError):
    pass


# first-step estimators
class SingularDesign(DteBoundsError):
    pass


class SolverNonconvergence(DteBoundsError):
    """Raised when a quantile-regression fit fails even after the LP fallback.

    ``taus`` lists the quantile levels that did not converge.
    """

    def __init__(self, taus, message=None):
        self.taus = tuple(taus)
        super().__init__(message or f"quantile regression failed at tau={self.taus}")


class TooFewTreatedUnits(DteBoundsError):
    pass


# joint recovery under copula stability
class InsufficientPairs(DteBoundsError):
    pass


# bounds engine
class GridCoverage(DteBoundsError):
    pass


class TauOutsideRange(DteBoundsError):
    pass


# inference
class InsufficientPeriods(DteBoundsError):
    pass


class PipelineFailure(DteBoundsError):
    """A bootstrap replicate raised; ``replicate`` identifies which one."""

    def __init__(self, replicate, cause):
        self.replicate = replicate
        self.cause = cause
        super().__init__(f"pipeline failed on replicate {replicate}: {cause!r}")


# synthetic data generation
class InvalidSpec(DteBoundsError):
    pass


# configuration / CLI
class ConfigError(DteBoundsError):
    """Configuration problem; ``field`` names the offending entry when known."""

    def __init__(self, message, field=None):
        self.field = field
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)


# warnings (recoverable conditions that are flagged, not raised)
class SeparationDetected(UserWarning):
    """Perfect or quasi separation in a distribution-regression threshold."""


class DegenerateReplicate(UserWarning):
    """A bootstrap resample had no treated (or no control) units and was redrawn."""


class ClampedSupport(UserWarning):
    """A quantile transform was evaluated outside the estimation support."""


class HeavyTies(UserWarning):
    """Tie fraction in outcomes exceeds the continuity diagnostic threshold."""


class EmptyGroup(UserWarning):
    """A group view (treated or control) is empty."""
