"""Exception hierarchy shared across the package.

Every error raised by the public API derives from DriftbenchError, so callers
can catch one base class at CLI or pipeline boundaries.
"""


class DriftbenchError(Exception):
    """Base class for all driftbench errors."""


# --- data ingestion / preprocessing ---------------------------------------

class IoError(DriftbenchError):
    pass


class ParseError(DriftbenchError):
    pass


class EmptyDataset(DriftbenchError):
    pass


class SchemaMismatch(DriftbenchError):
    pass


class AllMissingColumn(DriftbenchError):
    pass


class InsufficientRows(DriftbenchError):
    pass


class InvalidSpec(DriftbenchError):
    pass


# --- statistics ------------------------------------------------------------

class EmptySample(DriftbenchError):
    pass


class EmptyInput(DriftbenchError):
    pass


class InvalidArgument(DriftbenchError):
    pass


class InvalidShape(DriftbenchError):
    pass


class UnsupportedK(DriftbenchError):
    pass


class UnsupportedAlpha(DriftbenchError):
    pass


# --- models ----------------------------------------------------------------

class SingleClass(DriftbenchError):
    pass


class EmptyTrainingSet(DriftbenchError):
    pass


class DimensionMismatch(DriftbenchError):
    pass


class EmptyClassColumn(DriftbenchError):
    pass


class SingularMatrix(DriftbenchError):
    pass


class NoConvergence(DriftbenchError):
    pass


class DegenerateData(DriftbenchError):
    pass


# --- detectors ---------------------------------------------------------------

class WidthMismatch(DriftbenchError):
    pass


class UnfittedProjection(DriftbenchError):
    pass


class UnfittedModel(DriftbenchError):
    pass


class ModelMismatch(DriftbenchError):
    pass


class UnbalancedInput(DriftbenchError):
    pass


class TooFewSamples(DriftbenchError):
    pass


# --- shift simulation --------------------------------------------------------

class MissingLabels(DriftbenchError):
    pass


class NoNumericFeatures(DriftbenchError):
    pass


class EmptyResult(DriftbenchError):
    pass


class ClassTooSmall(DriftbenchError):
    pass


class UnknownShiftKind(DriftbenchError):
    pass


# --- benchmark ---------------------------------------------------------------

class MissingSize(DriftbenchError):
    pass


class InfeasibleShift(DriftbenchError):
    pass


class DegenerateNullWarning(UserWarning):
    """Null p-value distribution is degenerate (most mass at 1.0)."""
