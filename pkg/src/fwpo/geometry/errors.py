class GeometryError(Exception):
    """Base class for constraint-set failures."""


class InfeasibleError(GeometryError):
    pass


class UnboundedError(GeometryError):
    pass


class ConvergenceError(GeometryError):
    """An iterative oracle ran out of iterations.

    ``last`` holds the final iterate and ``residual`` the last movement.
    """

    def __init__(self, message, last=None, residual=None):
        super().__init__(message)
        self.last = last
        self.residual = residual
