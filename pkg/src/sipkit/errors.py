"""Exception hierarchy shared by every sipkit module."""

from __future__ import annotations


class SipError(Exception):
    """Base class for numerical and data failures raised by sipkit."""


class InvalidArgumentError(SipError, ValueError):
    """An argument violates a documented precondition."""


class SingularDesignError(SipError):
    """The design matrix of a logistic fit is rank deficient."""

    def __init__(self, message: str, columns: list[str] | None = None):
        super().__init__(message)
        self.columns = list(columns or [])


class ConvergenceError(SipError):
    """IRLS stopped without meeting the score tolerance and without separation."""

    def __init__(self, message: str, trace: list[tuple[int, float, float]] | None = None):
        super().__init__(message)
        self.trace = list(trace or [])


class FitFailureError(SipError):
    """A fit in an index-set family failed; carries the offending set."""

    def __init__(self, message: str, index_set: tuple[int, ...] = ()):
        super().__init__(message)
        self.index_set = tuple(index_set)


class GenerationError(SipError):
    """A random design cannot be generated as requested."""


class InfeasibleCorrelationError(GenerationError):
    """A binary correlation target lies outside the attainable bounds."""

    def __init__(self, message: str, bounds: tuple[float, float]):
        super().__init__(message)
        self.bounds = bounds


class ResamplingError(SipError):
    """Too many resampling draws failed, or too few succeeded to summarize."""


class CohortFormatError(SipError):
    """A cohort file could not be parsed into a Dataset."""


class InvariantError(SipError):
    """An internal precondition was violated (e.g. a fit missing from a cache)."""


class StudyError(SipError):
    """Too many replications of a Monte Carlo study failed."""

    def __init__(self, message: str, failures: list[tuple[int, str]] | None = None):
        super().__init__(message)
        self.failures = list(failures or [])
