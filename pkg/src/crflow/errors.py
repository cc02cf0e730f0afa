"""Exception hierarchy shared by all modules."""


class CRFError(Exception):
    """Base class for every error raised by crflow."""


class GridError(CRFError, ValueError):
    """Invalid grid or family parameters."""


class DegenerateMetricError(CRFError):
    """The metric lost positivity or produced non-finite curvature."""


class NearSingularOperatorError(CRFError):
    """The compact pressure operator sits on (or next to) its spectrum.

    ``ratio`` is the smallest singular value divided by the operator norm and
    ``near_kernel`` the corresponding singular vector (nodal values).
    """

    def __init__(self, message, ratio=None, near_kernel=None):
        super().__init__(message)
        self.ratio = ratio
        self.near_kernel = near_kernel


class SolverError(CRFError):
    """Elliptic solve failed (zero pivot or residual above tolerance)."""


class NewtonDivergenceError(CRFError):
    """Damped Newton iteration failed to converge."""

    def __init__(self, message, iterations=None, residual=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class GaugeBreakdownError(CRFError):
    """The DeTurck diffeomorphism stopped being monotone."""


class DegenerationHalt(CRFError):
    """Geometric degeneration detected during time stepping."""


class ConfigError(CRFError, ValueError):
    """Configuration text could not be parsed or violates a rule."""
