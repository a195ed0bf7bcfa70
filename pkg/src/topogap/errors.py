"""Exception hierarchy.

Every domain failure derives from :class:`TopogapError`; the CLI maps these to
exit code 1 and everything else (bad flags, missing files) to exit code 2.
"""


class TopogapError(Exception):
    """Base class for domain errors."""


class DegenerateLattice(TopogapError):
    pass


class UnsupportedKind(TopogapError):
    pass


class ShapeOutOfRange(TopogapError):
    pass


class ConvergenceFailure(TopogapError):
    def __init__(self, message, residual=None, kappa=None):
        super().__init__(message)
        self.residual = residual
        self.kappa = kappa


class SingularOverlap(TopogapError):
    pass


class QuantizationFailure(TopogapError):
    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


class SingularSystem(TopogapError):
    pass


class DegenerateValley(TopogapError):
    pass


class DegenerateScale(TopogapError):
    pass


class GapClosed(TopogapError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class SolverFailure(TopogapError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class MismatchedFields(TopogapError):
    pass


class ParseError(TopogapError):
    pass


class ValidationError(TopogapError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class FormatError(TopogapError):
    pass
