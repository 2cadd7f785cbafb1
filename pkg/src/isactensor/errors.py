"""Exception hierarchy shared by the estimators."""


class EstimationError(Exception):
    """Base class for failures raised by the estimation pipeline."""

    kind = "EstimationError"


class UniquenessError(EstimationError, ValueError):
    """Requested rank exceeds the identifiability bound of the tensor model."""

    kind = "UniquenessError"


class IllConditioned(EstimationError):
    """A subspace or least-squares system is numerically rank deficient."""

    kind = "IllConditioned"


class NumericalFailure(EstimationError):
    """A LAPACK routine did not converge."""

    kind = "NumericalFailure"


class Degenerate(EstimationError):
    """A rooting problem has no informative coefficients."""

    kind = "Degenerate"


class MatchFailure(EstimationError):
    """Per-subcarrier factor columns could not be aligned."""

    kind = "MatchFailure"
