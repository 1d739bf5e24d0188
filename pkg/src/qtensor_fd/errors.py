"""Exception hierarchy shared by the solver modules."""


class QTensorError(Exception):
    """Base class for all errors raised by :mod:`qtensor_fd`."""

    category = "error"


class GridMismatchError(QTensorError, ValueError):
    category = "argument"


class InputValidationError(QTensorError, ValueError):
    category = "input"


class QuadratizationError(QTensorError, ArithmeticError):
    """The radicand of r(Q) = sqrt(2(F_B(Q) + A0)) became non-positive."""

    category = "quadratization"

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class ConvergenceError(QTensorError, RuntimeError):
    category = "solver"

    def __init__(self, message, iterations=None, residual=None, step=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual
        self.step = step


class SPDViolationError(QTensorError, RuntimeError):
    category = "solver"


class IntegrityError(QTensorError, RuntimeError):
    """Trace or symmetry drift exceeded the runtime tolerance."""

    category = "integrity"

    def __init__(self, message, step=None, node=None):
        super().__init__(message)
        self.step = step
        self.node = node


class ConfigError(QTensorError, ValueError):
    category = "config"

    def __init__(self, message, line=None):
        if line is not None:
            message = f"{message} (line: {line!r})"
        super().__init__(message)
        self.line = line
