"""Exception hierarchy shared by the library and the CLI exit-code mapping."""


class RNLSError(Exception):
    """Base class for all errors raised by rnls."""

    exit_code = 1


class ValidationError(RNLSError, ValueError):
    """Bad input: domain violations, malformed configs, failed preconditions."""

    exit_code = 2


class NumericalError(RNLSError, ArithmeticError):
    """A computation ran but failed (NaN, non-convergence, broken certificate)."""

    exit_code = 3

    def __init__(self, message, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics
