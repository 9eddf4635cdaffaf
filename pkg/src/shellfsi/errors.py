"""Exception hierarchy shared by the solver modules.

Solver-stop conditions (guard, contraction, convergence) carry a ``reason``
string that ends up verbatim in the run manifest.
"""


class ShellFSIError(Exception):
    """Base class for all package errors."""

    reason = "Error"


class OutOfTube(ShellFSIError):
    reason = "OutOfTube"


class AmplitudeExceeded(ShellFSIError):
    reason = "AmplitudeExceeded"


class NonInvertible(ShellFSIError):
    reason = "NonInvertible"


class NoConvergence(ShellFSIError):
    reason = "NoConvergence"


class SelfIntersection(ShellFSIError):
    """Shell amplitude left the admissible band; the run must stop."""

    reason = "SelfIntersection"

    def __init__(self, message, t=None, margin=None):
        super().__init__(message)
        self.t = t
        self.margin = margin


class NoContraction(ShellFSIError):
    reason = "NoContraction"


class EigensolveFailure(ShellFSIError):
    reason = "EigensolveFailure"


class InfSupDeficient(ShellFSIError):
    reason = "InfSupDeficient"


class IncompatibleFlux(ShellFSIError):
    reason = "IncompatibleFlux"


class IncompatibleData(ShellFSIError):
    reason = "IncompatibleData"


class NotSPD(ShellFSIError):
    reason = "NotSPD"


class SingularSolve(ShellFSIError):
    reason = "SingularSolve"


class SingularProjection(ShellFSIError):
    reason = "SingularProjection"


class DegenerateWeight(ShellFSIError):
    reason = "DegenerateWeight"


class InsufficientHistory(ShellFSIError):
    reason = "InsufficientHistory"


class ConfigError(ShellFSIError):
    reason = "ValidationError"


class ParseError(ConfigError):
    reason = "ParseError"


class ValidationError(ConfigError):
    reason = "ValidationError"


class IOFailure(ShellFSIError):
    reason = "IOFailure"
