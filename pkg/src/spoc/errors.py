"""Exception hierarchy for the spoc package.

Errors are grouped by how the CLI reports them: ``DataError`` maps to exit
code 2 (malformed or inconsistent inputs), ``NumericError`` to exit code 3
(ill-conditioned or degenerate computations).
"""


class SpocError(Exception):
    """Base class for all package-specific errors."""


class DataError(SpocError):
    """Invalid, inconsistent, or missing input data."""


class NumericError(SpocError):
    """A computation failed for numerical reasons."""


# -- feature files ----------------------------------------------------------

class MalformedHeader(DataError):
    """File does not start with the expected magic/version."""


class ShapeMismatch(DataError):
    """Declared tensor shape disagrees with the payload."""


class NonFiniteValue(DataError):
    """A tensor contains NaN or infinite entries."""


class IoFailure(DataError):
    """An underlying read or write failed."""


class InvalidGeometry(DataError):
    """Receptive-field geometry violates its invariants."""


class OutOfBounds(DataError):
    """A cell coordinate lies outside the feature map."""


# -- fitting ----------------------------------------------------------------

class InsufficientData(DataError):
    """Too few samples for the requested fit."""


class DegenerateComponent(NumericError):
    """A mixture component collapsed (weight underflow)."""


class RankDeficient(NumericError):
    """Fewer usable principal directions than requested."""


class ZeroVector(NumericError):
    """Cannot normalize a vector with zero norm."""


class DimensionMismatch(DataError):
    """Vector or matrix dimensions do not agree."""


# -- retrieval --------------------------------------------------------------

class DuplicateId(DataError):
    """The same image id occurs more than once."""


class NotNormalized(DataError):
    """A descriptor does not have unit l2 norm."""


class EmptyCrop(DataError):
    """No receptive-field centers fall inside the query box."""


# -- evaluation -------------------------------------------------------------

class EmptyRelevantSet(DataError):
    """A query has no relevant images."""


class MissingTruth(DataError):
    """A query has no ground-truth entry."""


class ShortRanking(DataError):
    """A ranking is too short for the requested score."""


class InsufficientReference(DataError):
    """The reference feature set is smaller than the neighbor range."""


class ZeroResidualWarning(UserWarning):
    """A feature coincides with a centroid; its block was zeroed."""
