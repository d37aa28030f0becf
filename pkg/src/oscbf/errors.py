"""Exception types shared across the toolkit."""


class SingularOpSpaceInertia(RuntimeError):
    """Task-space inertia is too ill-conditioned even after damping.

    Raised when the smallest eigenvalue of J M^-1 J^T falls below the hard
    conditioning floor (1e-12). The singularity barrier is supposed to keep
    the arm away from such configurations; callers may treat this as a signal
    to clamp and recover.
    """


class DegenerateGeometry(RuntimeError):
    """Two sphere centers coincide, so the distance gradient is undefined."""


class WrongRelativeDegree(ValueError):
    """A constraint builder was handed a barrier of the wrong relative degree."""


class SimDiverged(RuntimeError):
    """The simulated state left the finite range (NaN/inf)."""
