"""Exception types raised across the package."""


class GslsError(Exception):
    """Base class for all package errors."""


class InvalidArg(GslsError, ValueError):
    pass


class DegenerateGraph(GslsError):
    """Random graph generation could not produce a usable GMD."""


class IllConditioned(GslsError):
    def __init__(self, message, cond=None):
        super().__init__(message)
        self.cond = cond


class Unstabilizable(GslsError):
    def __init__(self, message, mode=None):
        super().__init__(message)
        self.mode = mode


class UnstableClosedLoop(GslsError):
    pass


class DegenerateResponse(GslsError):
    """The leading lag of Phi_x is singular on some mode."""

    def __init__(self, message, mode=None):
        super().__init__(message)
        self.mode = mode


class Unstable(GslsError):
    pass


class SolverFailure(GslsError):
    pass
