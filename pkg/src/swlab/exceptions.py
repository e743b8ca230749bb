"""Exception hierarchy for swlab."""


class SWLabError(Exception):
    """Base class for every error raised by the package."""


class ShapeError(SWLabError, ValueError):
    """Array shapes are incompatible (n, d or p mismatch)."""


class NotInUError(SWLabError, ValueError):
    """A support has (numerically) repeated rows where distinct rows are required."""


class SingularDirectionsError(SWLabError, ValueError):
    """The direction second-moment matrix A is not invertible (typically p <= d)."""


class InstanceTooLargeError(SWLabError, ValueError):
    """A brute-force or exact solver was called beyond its size guard."""


class DivergenceError(SWLabError, RuntimeError):
    """An iterative solver left the bounded region or produced non-finite iterates.

    The partially recorded trajectory is attached as ``trajectory`` so callers
    can still report it.
    """

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory
