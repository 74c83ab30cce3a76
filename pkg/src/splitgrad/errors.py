"""Exception hierarchy shared across the package.

Negative mathematical results (e.g. "not a T_N configuration") are encoded
as ``None`` returns, never as exceptions.  Exceptions are reserved for
violated preconditions and genuinely invalid input.
"""


class SplitgradError(Exception):
    """Base class for all package errors."""


class WrongBranchError(SplitgradError):
    """Off-diagonal determinant gap requested on a matrix closer to L1."""


class DegenerateInputError(SplitgradError):
    """A cyclic determinant or affine-span condition degenerates."""


class RankDeficientError(SplitgradError):
    """Kernel is not one-dimensional where uniqueness is required."""


class CertificateError(SplitgradError):
    """An assembled certificate failed its own validity checks."""


class NotRankOneError(SplitgradError):
    """A splitting direction is not rank one."""


class NotOnSegmentError(SplitgradError):
    """The split barycenter does not lie on the prescribed segment."""


class MassExceededError(SplitgradError):
    """A split tried to move more mass than the atom carries."""


class SingularError(SplitgradError):
    """Pushforward by a singular matrix."""


class CellBudgetExceededError(SplitgradError):
    """Mesh synthesis exceeded the configured cell budget."""


class DimensionTooSmallError(SplitgradError):
    """Operation requires block size n >= 2."""


class NotClosedError(SplitgradError):
    """One-form is not closed to within the configured threshold."""


class NotAreaPreservingError(SplitgradError):
    """Planar map is not area preserving where required."""


class NotDifferentiableHereError(SplitgradError):
    """Requested point is too close to the declared singular set."""


class BadSlopesError(SplitgradError):
    """Piecewise-linear profile has slopes other than +-1."""
