"""Exception hierarchy.

Every error raised by the solvers derives from :class:`CalibrationError`.
The ``category`` attribute is what the command line maps to exit codes.
"""


class CalibrationError(Exception):
    category = "solver"


class DegenerateAnchor(CalibrationError):
    """The plane anchor lies on (or too close to) the tracked line."""


class DegenerateLine(CalibrationError):
    """A line was given by two (nearly) coincident points."""


class SingularBlock(CalibrationError):
    """The 3x3 linear block of an affine estimate is rank deficient."""


class RankDeficient(CalibrationError):
    """A stacked linear system has a larger nullspace than expected."""


class HomogeneousCollapse(CalibrationError):
    """The homogeneous entry of a null vector is numerically zero."""


class EliminationFailure(CalibrationError):
    """The elimination template did not leave enough reduced rows."""


class SingularC(CalibrationError):
    """The reduced template block used to build the action matrix is singular."""


class NoRealSolutions(CalibrationError):
    """Every eigenpair of the action matrix was rejected."""


class InsufficientData(CalibrationError):
    """Not enough acquisitions for one minimal sample."""


class NoModelFound(CalibrationError):
    """RANSAC never reached the required number of inliers."""


class NonFiniteCost(CalibrationError):
    """Residuals evaluated to inf or nan."""


class ParseError(CalibrationError):
    category = "parse"

    def __init__(self, message, record=None):
        if record is not None:
            message = f"record {record}: {message}"
        super().__init__(message)
        self.record = record


class InvariantViolation(ParseError):
    """A file parsed but one of its records breaks a data invariant."""
