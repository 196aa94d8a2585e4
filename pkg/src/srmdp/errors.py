"""Exception hierarchy and the CLI exit code each class maps to."""


class SrmdpError(Exception):
    exit_code = 1


class ArgumentError(SrmdpError, ValueError):
    """Malformed input: bad dimensions, invalid probabilities, bad files."""

    exit_code = 2


class NumericError(SrmdpError, ArithmeticError):
    exit_code = 3


class ConvergenceError(NumericError):
    """An iterative method hit its iteration cap before reaching tolerance."""

    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(f"{message} (residual={residual:.3e}, iterations={iterations})")
        self.residual = residual
        self.iterations = iterations


class UnsupportedError(SrmdpError):
    """Instance too large for an exhaustive/oracle routine."""

    exit_code = 4
