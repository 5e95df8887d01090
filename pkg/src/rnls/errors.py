"""Exception hierarchy. Each class maps onto one CLI exit code."""


class RNLSError(Exception):
    exit_code = 1


class ConfigError(RNLSError, ValueError):
    exit_code = 3


class ResolutionError(RNLSError):
    """A requested transform would sample the field outside what the grid resolves."""

    exit_code = 4


class DivergedStateError(RNLSError):
    exit_code = 4

    def __init__(self, message, t=None, record=None):
        super().__init__(message)
        self.t = t
        self.record = record


class SolverError(RNLSError):
    exit_code = 4

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class ConvergenceError(SolverError):
    pass


class DegenerateSeedError(SolverError):
    pass


class SearchFailureError(SolverError):
    pass


class NotApplicableError(RNLSError, ValueError):
    """Precondition of a diagnostic does not hold for the given input."""

    exit_code = 2


class CheckFailure(RNLSError):
    exit_code = 2
