"""Exception hierarchy shared across the package.

Every error carries an ``exit_code`` so the command line can map failures to
stable process exit statuses without inspecting messages.
"""


class NsibfError(Exception):
    exit_code = 1


class ValidationError(NsibfError, ValueError):
    """Bad input: wrong shapes, malformed files, out-of-range settings."""

    exit_code = 2


class ShapeError(ValidationError):
    pass


class InvalidWindowError(ValidationError):
    pass


class InsufficientDataError(ValidationError):
    pass


class ParseError(ValidationError):
    pass


class UndefinedMetricError(ValidationError):
    pass


class NumericalError(NsibfError, ArithmeticError):
    """A computation produced non-finite values or lost definiteness."""

    exit_code = 3


class DivergenceError(NumericalError):
    pass


class DegenerateCovarianceError(NumericalError):
    pass


class NumericalBreakdownError(NumericalError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class StaleTapeError(NsibfError, RuntimeError):
    exit_code = 3


class TuningFailureError(NumericalError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or []
