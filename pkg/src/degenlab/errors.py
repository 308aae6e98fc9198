"""Exception types raised by the workbench."""


class DegenlabError(Exception):
    """Base class for all workbench errors."""


class PreconditionError(DegenlabError):
    """An operation was called outside its domain of validity."""


class DepthExceededError(PreconditionError):
    """A dyadic query went below the construction depth of a weight."""


class ResolutionError(PreconditionError):
    """The grid is too coarse for the requested dyadic cube."""


class NotAccretiveError(PreconditionError):
    """A coefficient matrix failed the accretivity check on the range of D."""


class IllConditionedError(DegenlabError):
    """The eigenbasis of a non-normal operator is too ill-conditioned."""


class SingularBlockError(PreconditionError):
    """The normal-normal block of a coefficient matrix is singular."""


class NotHermitianError(PreconditionError):
    """A coefficient field expected to be hermitian is not."""


class CompatibilityError(PreconditionError):
    """Boundary data violate the solvability condition of the problem."""


class TraceMapSingularError(DegenlabError):
    """A boundary trace map is numerically singular."""


class GridMismatchError(PreconditionError):
    """Two fields were sampled on different t-grids."""


class SolverSingularError(DegenlabError):
    """The sparse reference solver hit a singular system."""
